#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "herdid/error.hpp"
#include "herdid/fs_util.hpp"
#include "herdid/json.hpp"
#include "herdid/pipeline.hpp"

namespace herdid {

namespace {

constexpr char kMagic[4] = {'E', 'I', 'D', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

void put_section(std::string& out, const double* data, std::size_t count) {
  put_u64(out, count);
  for (std::size_t i = 0; i < count; ++i) put_u64(out, std::bit_cast<std::uint64_t>(data[i]));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kFormatError, "model archive is truncated");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[b])) << (8 * b);
    return v;
  }
  std::vector<double> section(std::uint64_t expected) {
    const std::uint64_t n = u64();
    if (n != expected) {
      throw Error(ErrorCode::kFormatError, "model archive section holds " + std::to_string(n) +
                                               " values, header implies " + std::to_string(expected));
    }
    if ((bytes_.size() - pos_) / 8 < n) throw Error(ErrorCode::kFormatError, "model archive is truncated");
    std::vector<double> out(n);
    for (auto& v : out) v = std::bit_cast<double>(u64());
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json header_of(const ModelArchive& a) {
  nlohmann::json cal = nullptr;
  if (a.svm.calibration) {
    cal = nlohmann::json::array();
    for (const auto& p : *a.svm.calibration) {
      cal.push_back({{"a", p.a}, {"b", p.b}, {"degenerate", p.degenerate}, {"in_sample", p.in_sample}});
    }
  }
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& s : a.svm.solver_stats) {
    stats.push_back({{"epochs", s.epochs}, {"max_violation", s.max_violation}, {"converged", s.converged}});
  }
  const std::vector<double> ev(a.pca.explained_variance.data(),
                               a.pca.explained_variance.data() + a.pca.explained_variance.size());
  return {
      {"format_version", a.format_version},
      {"config", a.config},
      {"pca",
       {{"input_dim", a.pca.input_dim()},
        {"output_dim", a.pca.output_dim()},
        {"requested_dim", a.pca.requested_dim},
        {"explained_variance", ev}}},
      {"svm",
       {{"classes", a.svm.classes},
        {"dim", a.svm.dim()},
        {"class_weights", a.svm.class_weights},
        {"solver_stats", stats},
        {"calibration", cal}}},
      {"gallery", a.gallery},
      {"gallery_images", a.gallery_images},
      {"summary", a.summary},
  };
}

}  // namespace

std::string serialize_archive(const ModelArchive& a) {
  const std::string header = header_of(a).dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, header.size());
  out += header;
  put_section(out, a.pca.mean.data(), static_cast<std::size_t>(a.pca.mean.size()));
  const RowMatrix comps = a.pca.components;
  put_section(out, comps.data(), static_cast<std::size_t>(comps.size()));
  const RowMatrix weights = a.svm.weights;
  put_section(out, weights.data(), static_cast<std::size_t>(weights.size()));
  put_section(out, a.svm.biases.data(), static_cast<std::size_t>(a.svm.biases.size()));
  return out;
}

ModelArchive deserialize_archive(std::string_view bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(4).data(), kMagic, 4) != 0) throw Error(ErrorCode::kFormatError, "not a model archive");
  const std::uint64_t header_len = in.u64();
  ModelArchive a;
  try {
    const auto h = nlohmann::json::parse(in.take(header_len));
    a.format_version = h.at("format_version").get<int>();
    if (a.format_version != ModelArchive::kFormatVersion) {
      throw Error(ErrorCode::kFormatError, "unsupported archive version " + std::to_string(a.format_version));
    }
    a.config = h.at("config").get<PipelineConfig>();
    const auto& p = h.at("pca");
    const auto d = p.at("input_dim").get<Eigen::Index>();
    const auto r = p.at("output_dim").get<Eigen::Index>();
    a.pca.requested_dim = p.at("requested_dim").get<int>();
    const auto ev = p.at("explained_variance").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(ev.size()) != r) throw Error(ErrorCode::kFormatError, "explained variance length");
    a.pca.explained_variance = Eigen::Map<const Eigen::VectorXd>(ev.data(), r);

    const auto& s = h.at("svm");
    a.svm.classes = s.at("classes").get<std::vector<std::string>>();
    const auto sd = s.at("dim").get<Eigen::Index>();
    if (sd != r) throw Error(ErrorCode::kFormatError, "SVM dim does not match PCA output");
    a.svm.class_weights = s.at("class_weights").get<std::vector<double>>();
    for (const auto& st : s.at("solver_stats")) {
      a.svm.solver_stats.push_back(
          {st.at("epochs").get<int>(), st.at("max_violation").get<double>(), st.at("converged").get<bool>()});
    }
    if (!s.at("calibration").is_null()) {
      std::vector<PlattParams> cal;
      for (const auto& c : s.at("calibration")) {
        PlattParams pp;
        pp.a = c.at("a").get<double>();
        pp.b = c.at("b").get<double>();
        pp.degenerate = c.at("degenerate").get<bool>();
        pp.in_sample = c.at("in_sample").get<bool>();
        cal.push_back(pp);
      }
      if (cal.size() != a.svm.classes.size()) throw Error(ErrorCode::kFormatError, "calibration length");
      a.svm.calibration = std::move(cal);
    }
    a.svm.params = a.config.svm;
    a.gallery = h.at("gallery").get<std::vector<Individual>>();
    a.gallery_images = h.at("gallery_images").get<std::map<std::string, std::string>>();
    a.summary = h.at("summary").get<TrainingSummary>();

    const auto k = static_cast<Eigen::Index>(a.svm.classes.size());
    const auto mean = in.section(static_cast<std::uint64_t>(d));
    a.pca.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
    const auto comps = in.section(static_cast<std::uint64_t>(r * d));
    a.pca.components = Eigen::Map<const RowMatrix>(comps.data(), r, d);
    const auto weights = in.section(static_cast<std::uint64_t>(k * r));
    a.svm.weights = Eigen::Map<const RowMatrix>(weights.data(), k, r);
    const auto biases = in.section(static_cast<std::uint64_t>(k));
    a.svm.biases = Eigen::Map<const Eigen::VectorXd>(biases.data(), k);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kFormatError, std::string("model archive header: ") + ex.what());
  }
  if (!in.done()) throw Error(ErrorCode::kFormatError, "trailing bytes after model archive");
  return a;
}

void save_archive(const std::filesystem::path& path, const ModelArchive& archive) {
  atomic_write_file(path, serialize_archive(archive));
}

ModelArchive load_archive(const std::filesystem::path& path) {
  return deserialize_archive(read_file(path));
}

}  // namespace herdid
