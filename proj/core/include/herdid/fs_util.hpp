#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace herdid {

/// Writes `bytes` to a sibling temp file, fsyncs it, then renames it over
/// `path`. Readers observe either the old or the new content, never a mix.
/// `before_rename` runs after the temp file is complete; if it throws, the
/// temp file is removed and `path` is left untouched (used for fault
/// injection in tests).
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes,
                       const std::function<void()>& before_rename = {});

std::string read_file(const std::filesystem::path& path);

}  // namespace herdid
