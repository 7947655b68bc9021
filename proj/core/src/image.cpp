#include "herdid/image.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "herdid/error.hpp"
#include "herdid/fs_util.hpp"

namespace herdid {

RgbImage decode_image(std::string_view bytes) {
  if (bytes.empty()) throw Error(ErrorCode::kUndecodableImage, "empty image payload");
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<char*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception& ex) {
    throw Error(ErrorCode::kUndecodableImage, std::string("image decode failed: ") + ex.what());
  }
  if (bgr.empty()) throw Error(ErrorCode::kUndecodableImage, "image bytes could not be decoded");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(rgb.cols, rgb.rows);
  for (int y = 0; y < rgb.rows; ++y) {
    std::memcpy(&out.pixels[static_cast<std::size_t>(y) * rgb.cols * 3], rgb.ptr<std::uint8_t>(y),
                static_cast<std::size_t>(rgb.cols) * 3);
  }
  return out;
}

RgbImage load_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file(path));
  } catch (const Error& ex) {
    throw Error(ex.code(), path.string() + ": " + ex.what());
  }
}

std::string encode_png(const RgbImage& image) {
  if (image.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot encode an empty image");
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> buffer;
  if (!cv::imencode(".png", bgr, buffer)) throw Error(ErrorCode::kIoError, "png encoding failed");
  return std::string(buffer.begin(), buffer.end());
}

void save_png(const std::filesystem::path& path, const RgbImage& image) {
  atomic_write_file(path, encode_png(image));
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIoError, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

std::string sniff_image_extension(std::string_view bytes) {
  auto starts = [&](std::string_view magic) { return bytes.substr(0, magic.size()) == magic; };
  if (starts("\x89PNG")) return ".png";
  if (starts("\xff\xd8\xff")) return ".jpg";
  if (starts("BM")) return ".bmp";
  return ".img";
}

}  // namespace herdid
