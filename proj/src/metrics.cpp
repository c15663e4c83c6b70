#include "mevo/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mevo/image_ops.hpp"
#include "mevo/rng.hpp"

namespace mevo {

// ---------------- embedders ----------------

FixedRandomEmbedder::FixedRandomEmbedder(std::uint64_t seed, int dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("FixedRandomEmbedder: dim must be >= 1");
  Rng rng(seed);
  projection_ = Tensor({dim, 768});
  const double scale = 1.0 / std::sqrt(768.0);
  for (std::int64_t i = 0; i < projection_.size(); ++i) projection_[i] = rng.normal(0.0, scale);
}

std::vector<double> FixedRandomEmbedder::embed(const Frame& frame) const {
  Tensor small = resize_bilinear(frame.data, 16, 16);
  std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
  for (int d = 0; d < dim_; ++d) {
    double s = 0.0;
    for (std::int64_t i = 0; i < 768; ++i) s += projection_.at(d, static_cast<int>(i)) * small[i];
    out[static_cast<std::size_t>(d)] = s;
  }
  return out;
}

std::vector<double> IdentityDownsampleEmbedder::embed(const Frame& frame) const {
  Tensor small = resize_bilinear(frame.data, 4, 4);
  return std::vector<double>(small.data(), small.data() + small.size());
}

// ---------------- scalar metrics ----------------

double l1_metric(const Frame& gen, const Frame& real) {
  check_same_shape(gen.data, real.data, "l1_metric");
  double s = 0.0;
  for (std::int64_t i = 0; i < gen.data.size(); ++i) s += std::fabs(gen.data[i] - real.data[i]);
  return s / static_cast<double>(gen.data.size());
}

double psnr(const Frame& gen, const Frame& real, double peak) {
  check_same_shape(gen.data, real.data, "psnr");
  double mse = 0.0;
  for (std::int64_t i = 0; i < gen.data.size(); ++i) {
    const double d = gen.data[i] - real.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(gen.data.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(peak * peak / mse));
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWin * kWin);
  const double sigma = 1.5;
  double sum = 0.0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - 5.0, dx = x - 5.0;
      w[static_cast<std::size_t>(y * kWin + x)] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      sum += w[static_cast<std::size_t>(y * kWin + x)];
    }
  for (auto& v : w) v /= sum;
  return w;
}

struct SsimMaps {
  // means over valid windows of the luminance term and the full ssim map
  double mean_cs = 0.0;
  double mean_ssim = 0.0;
};

// Windowed SSIM statistics for one channel pair, valid region only.
SsimMaps ssim_channel(const Tensor& a, const Tensor& b, int channel) {
  static const std::vector<double> win = gaussian_window();
  const int h = a.dim(1), w = a.dim(2);
  const int vh = h - kWin + 1, vw = w - kWin + 1;
  SsimMaps out;
  double acc_cs = 0.0, acc_ssim = 0.0;
  for (int y = 0; y < vh; ++y) {
    for (int x = 0; x < vw; ++x) {
      double m1 = 0, m2 = 0, m11 = 0, m22 = 0, m12 = 0;
      for (int ky = 0; ky < kWin; ++ky)
        for (int kx = 0; kx < kWin; ++kx) {
          const double wgt = win[static_cast<std::size_t>(ky * kWin + kx)];
          const double v1 = a.at(channel, y + ky, x + kx);
          const double v2 = b.at(channel, y + ky, x + kx);
          m1 += wgt * v1;
          m2 += wgt * v2;
          m11 += wgt * v1 * v1;
          m22 += wgt * v2 * v2;
          m12 += wgt * v1 * v2;
        }
      const double s1 = m11 - m1 * m1;
      const double s2 = m22 - m2 * m2;
      const double s12 = m12 - m1 * m2;
      const double cs = (2 * s12 + kC2) / (s1 + s2 + kC2);
      const double lum = (2 * m1 * m2 + kC1) / (m1 * m1 + m2 * m2 + kC1);
      acc_cs += cs;
      acc_ssim += lum * cs;
    }
  }
  const double n = static_cast<double>(vh) * vw;
  out.mean_cs = acc_cs / n;
  out.mean_ssim = acc_ssim / n;
  return out;
}

SsimMaps ssim_stats(const Tensor& a, const Tensor& b) {
  SsimMaps acc;
  for (int c = 0; c < 3; ++c) {
    SsimMaps s = ssim_channel(a, b, c);
    acc.mean_cs += s.mean_cs / 3.0;
    acc.mean_ssim += s.mean_ssim / 3.0;
  }
  return acc;
}

}  // namespace

double ssim(const Frame& gen, const Frame& real) {
  check_same_shape(gen.data, real.data, "ssim");
  if (gen.height() < kWin || gen.width() < kWin)
    throw std::invalid_argument("ssim: frame smaller than the 11x11 window");
  return ssim_stats(gen.data, real.data).mean_ssim;
}

int max_ms_ssim_levels(int height, int width) {
  int levels = 0;
  while (levels < 5 && (height >> levels) >= kWin && (width >> levels) >= kWin) ++levels;
  return levels;
}

double ms_ssim(const Frame& gen, const Frame& real, int levels) {
  check_same_shape(gen.data, real.data, "ms_ssim");
  if (levels < 1 || levels > 5) throw std::invalid_argument("ms_ssim: levels must be in [1,5]");
  if ((gen.height() >> (levels - 1)) < kWin || (gen.width() >> (levels - 1)) < kWin)
    throw std::invalid_argument("ms_ssim: frame too small for the requested level count");
  if (levels == 1) return ssim(gen, real);  // single scale is plain SSIM, sign preserved

  static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double wsum = 0.0;
  for (int i = 0; i < levels; ++i) wsum += kWeights[i];

  Tensor a = gen.data, b = real.data;
  double result = 1.0;
  for (int level = 0; level < levels; ++level) {
    SsimMaps s = ssim_stats(a, b);
    const double weight = kWeights[level] / wsum;
    if (level + 1 < levels) {
      result *= std::pow(std::max(s.mean_cs, 0.0), weight);
      a = avg_pool2(a);
      b = avg_pool2(b);
    } else {
      result *= std::pow(std::max(s.mean_ssim, 0.0), weight);
    }
  }
  return result;
}

double perceptual_distance(const Frame& gen, const Frame& real, const FeatureExtractor& fx) {
  return perceptual_loss(gen, real, fx);
}

// ---------------- FID ----------------

namespace {

void moments(const std::vector<std::vector<double>>& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const int n = static_cast<int>(x.size());
  const int d = static_cast<int>(x[0].size());
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  mu = m.colwise().mean();
  cov = Eigen::MatrixXd::Zero(d, d);
  if (n > 1) {
    Eigen::MatrixXd centered = m.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n - 1);
  }
  if (n < d + 1) cov += 1e-6 * Eigen::MatrixXd::Identity(d, d);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid_from_embeddings(const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("fid: empty embedding set");
  if (a[0].size() != b[0].size()) throw std::invalid_argument("fid: embedding dims differ");
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd s1, s2;
  moments(a, mu1, s1);
  moments(b, mu2, s2);

  const Eigen::MatrixXd s1h = psd_sqrt(s1);
  Eigen::MatrixXd inner = s1h * s2 * s1h;
  inner = 0.5 * (inner + inner.transpose());  // symmetrize before the eigensolve
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner);
  const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  return (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * trace_sqrt;
}

double fid(const std::vector<Frame>& gen, const std::vector<Frame>& real, const Embedder& embedder) {
  if (gen.empty() || real.empty()) throw std::invalid_argument("fid: empty frame set");
  std::vector<std::vector<double>> a, b;
  a.reserve(gen.size());
  b.reserve(real.size());
  for (const auto& f : gen) a.push_back(embedder.embed(f));
  for (const auto& f : real) b.push_back(embedder.embed(f));
  return fid_from_embeddings(a, b);
}

// ---------------- AKD / CSIM ----------------

double akd(const std::vector<KeypointSet>& gen, const std::vector<KeypointSet>& real, int height,
           int width) {
  if (gen.size() != real.size() || gen.empty())
    throw std::invalid_argument("akd: series lengths differ or are empty");
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::size_t f = 0; f < gen.size(); ++f) {
    if (gen[f].count() != real[f].count())
      throw std::invalid_argument("akd: keypoint counts differ at frame " + std::to_string(f));
    for (int i = 0; i < gen[f].count(); ++i) {
      const Vec2 d = gen[f].points[static_cast<std::size_t>(i)] -
                     real[f].points[static_cast<std::size_t>(i)];
      const double dx = d.x * 0.5 * (width - 1);
      const double dy = d.y * 0.5 * (height - 1);
      acc += std::sqrt(dx * dx + dy * dy);
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateEmbeddingError("cosine_similarity: zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double csim(const Frame& gen, const Frame& real, const Embedder& embedder) {
  return cosine_similarity(embedder.embed(gen), embedder.embed(real));
}

// ---------------- reports ----------------

std::string metric_direction(const std::string& name) {
  if (name == "psnr" || name == "ssim" || name == "ms_ssim" || name == "csim") return "up";
  return "down";  // l1, perc, fid, akd
}

const MetricRecord* MetricReport::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricReport::serialize() const {
  std::ostringstream os;
  os << "# mevo metric report v1\n";
  os << "dataset " << (dataset.empty() ? "-" : dataset) << "\n";
  os << "task " << (task.empty() ? "-" : task) << "\n";
  for (const auto& [k, v] : meta) os << "meta " << k << " " << v << "\n";
  for (const auto& r : records) {
    os << "metric " << r.name << " " << r.direction << " " << format_double(r.value) << " "
       << r.frames << "\n";
    if (!r.series.empty()) {
      os << "series " << r.name;
      for (double v : r.series) os << " " << format_double(v);
      os << "\n";
    }
    if (!r.note.empty()) os << "note " << r.name << " " << r.note << "\n";
  }
  return os.str();
}

MetricReport MetricReport::parse(const std::string& text) {
  MetricReport rep;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "dataset") {
      ls >> rep.dataset;
      if (rep.dataset == "-") rep.dataset.clear();
    } else if (tag == "task") {
      ls >> rep.task;
      if (rep.task == "-") rep.task.clear();
    } else if (tag == "meta") {
      std::string k, v, rest;
      ls >> k >> v;
      std::getline(ls, rest);
      rep.meta.emplace_back(k, v + rest);
    } else if (tag == "metric") {
      MetricRecord r;
      ls >> r.name >> r.direction >> r.value >> r.frames;
      rep.records.push_back(std::move(r));
    } else if (tag == "series") {
      std::string name;
      ls >> name;
      for (auto& r : rep.records)
        if (r.name == name) {
          double v;
          while (ls >> v) r.series.push_back(v);
        }
    } else if (tag == "note") {
      std::string name;
      ls >> name;
      std::string rest;
      std::getline(ls, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      for (auto& r : rep.records)
        if (r.name == name) r.note = rest;
    } else {
      throw std::invalid_argument("MetricReport::parse: unknown tag '" + tag + "'");
    }
  }
  return rep;
}

}  // namespace mevo
