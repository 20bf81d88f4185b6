#include "vpgc/diagnostics/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "vpgc/tensor/ops.hpp"

namespace vpgc::diag {

namespace {

std::vector<int64_t> range(int64_t lo, int64_t hi) {
  std::vector<int64_t> out;
  for (int64_t i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

std::vector<double> softmax_row(const double* z, int64_t k) {
  const double top = *std::max_element(z, z + k);
  std::vector<double> p(k);
  double sum = 0;
  for (int64_t j = 0; j < k; ++j) sum += p[j] = std::exp(z[j] - top);
  for (auto& v : p) v /= sum;
  return p;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

data::ImageDataset transformed(const data::ImageDataset& src, TransformKind kind, double value) {
  data::ImageDataset out{src.channels, src.height, src.width, {}, {}, src.class_names, src.provenance};
  out.pixels.reserve(src.pixels.size());
  for (int64_t i = 0; i < src.size(); ++i) {
    out.append(transform_image(src.image(i), src.channels, src.height, src.width, kind, value), src.labels[i]);
  }
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("csv: bad number '" + s + "'");
  return v;
}

// Reads "# key=value ..." comment lines and the header, returning data rows.
struct CsvFile {
  std::map<std::string, std::string> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvFile read_csv(std::istream& in, const std::string& expected_prefix) {
  CsvFile f;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream words(line.substr(1));
      std::string w;
      while (words >> w) {
        const auto eq = w.find('=');
        if (eq != std::string::npos) f.meta[w.substr(0, eq)] = w.substr(eq + 1);
      }
      continue;
    }
    if (f.header.empty()) {
      f.header = split(line, ',');
      if (line.rfind(expected_prefix, 0) != 0) throw std::invalid_argument("csv: unexpected header '" + line + "'");
      continue;
    }
    auto cells = split(line, ',');
    if (cells.size() != f.header.size()) throw std::invalid_argument("csv: row width differs from header: " + line);
    f.rows.push_back(std::move(cells));
  }
  if (f.header.empty()) throw std::invalid_argument("csv: missing header");
  return f;
}

std::string join_numbers(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + format_number(v[i]);
  return out;
}

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& cell : split(s, ';')) out.push_back(parse_number(cell));
  return out;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::vector<double> logits(Network<T>& net, const data::ImageDataset& images, int chunk) {
  ad::NoGradGuard no_grad;
  std::vector<double> out;
  net::ForwardOptions opts;
  for (int64_t lo = 0; lo < images.size(); lo += chunk) {
    const auto idx = range(lo, std::min<int64_t>(images.size(), lo + chunk));
    const auto z = net.forward(images.batch<T>(idx), opts).logits;
    for (T v : z.values()) out.push_back(static_cast<double>(v));
  }
  return out;
}

template <typename T>
std::vector<std::vector<double>> probabilities(Network<T>& net, const data::ImageDataset& images, const EvalMode& mode,
                                               int chunk) {
  const int64_t k = net.config().classes;
  std::vector<std::vector<double>> out(images.size(), std::vector<double>(k, 0.0));
  if (mode.deterministic) {
    const auto z = logits(net, images, chunk);
    for (int64_t i = 0; i < images.size(); ++i) out[i] = softmax_row(z.data() + i * k, k);
    return out;
  }
  if (mode.samples < 1) throw std::invalid_argument("probabilities: need at least one sample");
  ad::NoGradGuard no_grad;
  for (int s = 0; s < mode.samples; ++s) {
    Rng rng = Rng::stream(mode.seed, "eval", static_cast<uint64_t>(s));
    net::ForwardOptions opts;
    opts.deterministic = false;
    opts.rng = &rng;
    for (int64_t lo = 0; lo < images.size(); lo += chunk) {
      const auto idx = range(lo, std::min<int64_t>(images.size(), lo + chunk));
      const auto z = net.forward(images.batch<T>(idx), opts).logits.values();
      std::vector<double> zd(z.begin(), z.end());
      for (size_t r = 0; r < idx.size(); ++r) {
        const auto p = softmax_row(zd.data() + r * k, k);
        for (int64_t j = 0; j < k; ++j) out[idx[r]][j] += p[j] / mode.samples;
      }
    }
  }
  return out;
}

std::string to_string(TransformKind kind) { return kind == TransformKind::Rotation ? "rotation" : "hue"; }

TransformKind parse_transform_kind(const std::string& name) {
  if (name == "rotation") return TransformKind::Rotation;
  if (name == "hue") return TransformKind::Hue;
  throw std::invalid_argument("unknown transform kind '" + name + "' (valid: rotation, hue)");
}

std::vector<float> transform_image(std::span<const float> image, int64_t channels, int64_t height, int64_t width,
                                   TransformKind kind, double value) {
  if (kind == TransformKind::Rotation) {
    auto out = data::rotate_image(image, channels, height, width, value);
    for (float& v : out) v = std::clamp(v, 0.0f, 1.0f);
    return out;
  }
  if (channels != 3) throw std::invalid_argument("hue transform needs 3-channel images");
  return data::hue_shift_image(image, height, width, value);
}

std::vector<double> uniform_grid(TransformKind kind, int n) {
  if (n < 1) throw std::invalid_argument("grid needs at least one point");
  const double period = kind == TransformKind::Rotation ? 2 * std::numbers::pi : 1.0;
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(period * i / n);
  return out;
}

template <typename T>
ConfidenceProfile confidence_profile(Network<T>& net, const data::ImageDataset& images, int64_t index,
                                     TransformKind kind, std::vector<double> grid, const EvalMode& mode) {
  std::sort(grid.begin(), grid.end());
  data::ImageDataset sweep{images.channels, images.height, images.width, {}, {}, images.class_names, {}};
  const auto img = images.image(index);
  for (double g : grid) sweep.append(transform_image(img, images.channels, images.height, images.width, kind, g), 0);
  ConfidenceProfile p{kind, grid, probabilities(net, sweep, mode), {}};
  for (const auto& row : p.probabilities) p.argmax.push_back(argmax(row));
  return p;
}

EquivarianceErrorReport equivariance_error(const BatchModel& psi, const data::ImageDataset& inputs, TransformKind kind,
                                           std::vector<double> grid, const OutputAction& rho) {
  if (grid.empty()) throw std::invalid_argument("equivariance_error: empty group grid");
  std::sort(grid.begin(), grid.end());
  EquivarianceErrorReport r{kind, grid, std::vector<double>(inputs.size(), 0.0), inputs.labels, {}};
  const auto base = psi(inputs);
  for (double g : grid) {
    const auto moved = psi(transformed(inputs, kind, g));
    for (int64_t i = 0; i < inputs.size(); ++i) {
      const auto expected = rho ? rho(base[i], g) : base[i];
      if (expected.size() != moved[i].size()) throw std::invalid_argument("equivariance_error: output size changed");
      double sq = 0;
      for (size_t j = 0; j < expected.size(); ++j) sq += (moved[i][j] - expected[j]) * (moved[i][j] - expected[j]);
      r.errors[i] = std::max(r.errors[i], std::sqrt(sq));
    }
  }
  for (int64_t i = 0; i < inputs.size(); ++i) {
    auto [it, fresh] = r.per_class.try_emplace(r.labels[i], r.errors[i], r.errors[i]);
    if (!fresh) {
      it->second.first = std::min(it->second.first, r.errors[i]);
      it->second.second = std::max(it->second.second, r.errors[i]);
    }
  }
  return r;
}

template <typename T>
EquivarianceErrorReport equivariance_error(Network<T>& net, const data::ImageDataset& inputs, TransformKind kind,
                                           std::vector<double> grid) {
  const int64_t k = net.config().classes;
  BatchModel psi = [&](const data::ImageDataset& batch) {
    const auto z = logits(net, batch);
    std::vector<std::vector<double>> rows;
    for (int64_t i = 0; i < batch.size(); ++i) rows.emplace_back(z.begin() + i * k, z.begin() + (i + 1) * k);
    return rows;
  };
  return equivariance_error(psi, inputs, kind, std::move(grid));
}

CalibrationReport calibration(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw std::invalid_argument("calibration: predictions and labels differ in count");
  if (probs.empty()) throw std::invalid_argument("calibration: no predictions");
  CalibrationReport r;
  r.count = static_cast<int64_t>(probs.size());
  int64_t correct = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    double sum = 0;
    for (double v : p) {
      if (!(v >= 0 && v <= 1)) throw std::invalid_argument("calibration: probability outside [0, 1] in row " + std::to_string(i));
      sum += v;
    }
    if (std::abs(sum - 1) > 1e-6) throw std::invalid_argument("calibration: row " + std::to_string(i) + " sums to " + format_number(sum));
    const int y = labels[i];
    if (y < 0 || y >= static_cast<int>(p.size())) throw std::invalid_argument("calibration: label out of range");
    double truth = p[y];
    if (truth < 1e-12) {
      truth = 1e-12;
      ++r.floored;
    }
    r.nll -= std::log(truth);
    for (size_t c = 0; c < p.size(); ++c) {
      const double d = p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0);
      r.brier += d * d;
    }
    if (argmax(p) == y) ++correct;
  }
  r.nll /= r.count;
  r.brier /= r.count;
  r.accuracy = static_cast<double>(correct) / r.count;
  return r;
}

void StabilityTrace::record(int epoch, std::vector<double> shares) {
  if (elements == 0) elements = static_cast<int>(shares.size());
  if (static_cast<int>(shares.size()) != elements) throw std::invalid_argument("stability: element count changed");
  epochs.push_back(epoch);
  frequency.push_back(std::move(shares));
}

std::vector<double> StabilityTrace::trailing_variance_per_element(double fraction) const {
  std::vector<double> out(elements, 0.0);
  if (frequency.empty()) return out;
  const size_t n = frequency.size();
  const size_t window = std::max<size_t>(1, static_cast<size_t>(std::ceil(fraction * static_cast<double>(n))));
  for (int e = 0; e < elements; ++e) {
    double mean = 0;
    for (size_t t = n - window; t < n; ++t) mean += frequency[t][e];
    mean /= static_cast<double>(window);
    double var = 0;
    for (size_t t = n - window; t < n; ++t) var += (frequency[t][e] - mean) * (frequency[t][e] - mean);
    out[e] = var / static_cast<double>(window);
  }
  return out;
}

double StabilityTrace::trailing_variance(double fraction) const {
  const auto v = trailing_variance_per_element(fraction);
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

template <typename T>
std::vector<double> selection_frequency(Network<T>& net, int layer, const data::ImageDataset& probes, int draws,
                                        Rng& rng) {
  const auto kind = net.config().dist;
  if (kind != net::DistKind::Discrete && kind != net::DistKind::Gumbel) {
    throw std::invalid_argument("selection_frequency: only discrete distributions select elements");
  }
  if (draws < 1) throw std::invalid_argument("selection_frequency: need at least one draw");
  ad::NoGradGuard no_grad;
  net::ForwardOptions eval;
  const auto all = range(0, probes.size());
  const auto input = net.features_before(probes.batch<T>(all), layer, eval);
  net::ForwardOptions draw;
  draw.deterministic = false;
  draw.rng = &rng;
  const int m = net.config().layers.at(layer).elements;
  std::vector<double> share(m, 0.0);
  for (int d = 0; d < draws; ++d) {
    const auto mask = net.sample_layer(layer, input, draw).weights.values();
    for (int64_t b = 0; b < probes.size(); ++b) {
      double kept = 0;
      for (int j = 0; j < m; ++j) kept += mask[b * m + j];
      for (int j = 0; j < m; ++j) share[j] += mask[b * m + j] / kept;
    }
  }
  for (auto& s : share) s /= static_cast<double>(draws) * static_cast<double>(probes.size());
  return share;
}

template <typename T>
EquivarianceBound hue_conv_bound(const conv::ConvKernel<T>& kernel, const group::FeatureMap<T>& f, int g,
                                 const std::vector<double>& q, const std::vector<double>& q_shifted) {
  const int m = static_cast<int>(f.group_size());
  if (kernel.config().kind != conv::ConvKind::Group || kernel.config().group != group::GroupKind::Hue) {
    throw std::invalid_argument("hue_conv_bound: needs a hue group convolution");
  }
  if (static_cast<int>(q.size()) != m || static_cast<int>(q_shifted.size()) != m) {
    throw std::invalid_argument("hue_conv_bound: weight vectors must have one entry per element");
  }
  ad::NoGradGuard no_grad;
  const auto element = group::HueElement::of(m, g);
  const auto set = f.elements;
  auto weights = [&](const std::vector<double>& w) {
    return conv::OutputSpec<T>{set, std::nullopt, ad::Tensor<T>({m}, std::vector<T>(w.begin(), w.end()))};
  };
  // Acting on a length-m vector through a 1x1 feature map keeps the index
  // convention identical to the one used on real features.
  auto act = [&](const std::vector<double>& v) {
    group::FeatureMap<T> fm{ad::Tensor<T>({1, m, 1, 1, 1}, std::vector<T>(v.begin(), v.end())), set, std::nullopt};
    const auto moved = group::regular_action<T>(element, fm).data.values();
    return std::vector<double>(moved.begin(), moved.end());
  };

  const auto lhs = conv::group_conv(group::regular_action<T>(element, f), weights(q_shifted), kernel).data.values();
  const auto rhs = group::regular_action<T>(element, conv::group_conv(f, weights(q), kernel)).data.values();
  double err = 0;
  for (size_t i = 0; i < lhs.size(); ++i) err += (static_cast<double>(lhs[i]) - rhs[i]) * (static_cast<double>(lhs[i]) - rhs[i]);

  // mean_v ||k(v^-1 u) f(v)||^2 per output element u, from single-element inputs.
  const std::vector<double> ones(m, 1.0);
  std::vector<double> energy(m, 0.0);
  const int64_t per_elem = f.data.numel() / (f.batch() * m);
  for (int v = 0; v < m; ++v) {
    auto only = f.data.values();
    for (int64_t b = 0; b < f.batch(); ++b) {
      for (int u = 0; u < m; ++u) {
        if (u == v) continue;
        std::fill_n(only.begin() + (b * m + u) * per_elem, per_elem, T(0));
      }
    }
    group::FeatureMap<T> fv{ad::Tensor<T>(f.data.shape(), std::move(only)), set, std::nullopt};
    const auto out = conv::group_conv(fv, weights(ones), kernel);
    const auto vals = out.data.values();
    const int64_t out_per = out.data.numel() / (out.batch() * m);
    for (int64_t b = 0; b < out.batch(); ++b) {
      for (int u = 0; u < m; ++u) {
        for (int64_t k = 0; k < out_per; ++k) {
          const double term = m * static_cast<double>(vals[(b * m + u) * out_per + k]);  // undo the 1/m Haar weight
          energy[u] += term * term / m;
        }
      }
    }
  }
  const auto q_moved = act(q);
  const auto energy_moved = act(energy);
  double bound = 0;
  for (int u = 0; u < m; ++u) bound += (q_shifted[u] - q_moved[u]) * (q_shifted[u] - q_moved[u]) * energy_moved[u];
  return {std::sqrt(err), std::sqrt(bound)};
}

void write_profile_csv(std::ostream& out, const ConfidenceProfile& p) {
  const size_t k = p.probabilities.empty() ? 0 : p.probabilities.front().size();
  out << "# kind=" << to_string(p.kind) << "\n";
  out << "grid_value";
  for (size_t c = 0; c < k; ++c) out << ",class_" << c;
  out << ",argmax\n";
  for (size_t i = 0; i < p.grid.size(); ++i) {
    out << format_number(p.grid[i]);
    for (double v : p.probabilities[i]) out << ',' << format_number(v);
    out << ',' << p.argmax[i] << '\n';
  }
}

ConfidenceProfile read_profile_csv(std::istream& in, TransformKind kind) {
  const auto f = read_csv(in, "grid_value,");
  if (f.header.back() != "argmax") throw std::invalid_argument("csv: profile header must end with argmax");
  ConfidenceProfile p{kind, {}, {}, {}};
  if (auto it = f.meta.find("kind"); it != f.meta.end()) p.kind = parse_transform_kind(it->second);
  for (const auto& row : f.rows) {
    p.grid.push_back(parse_number(row.front()));
    std::vector<double> probs;
    for (size_t c = 1; c + 1 < row.size(); ++c) probs.push_back(parse_number(row[c]));
    p.probabilities.push_back(std::move(probs));
    p.argmax.push_back(static_cast<int>(parse_number(row.back())));
  }
  return p;
}

void write_equiv_error_csv(std::ostream& out, const EquivarianceErrorReport& r) {
  out << "# kind=" << to_string(r.kind) << " grid=" << join_numbers(r.grid) << "\n";
  out << "input_id,class,error\n";
  for (size_t i = 0; i < r.errors.size(); ++i) out << i << ',' << r.labels[i] << ',' << format_number(r.errors[i]) << '\n';
}

EquivarianceErrorReport read_equiv_error_csv(std::istream& in) {
  const auto f = read_csv(in, "input_id,class,error");
  EquivarianceErrorReport r;
  if (auto it = f.meta.find("kind"); it != f.meta.end()) r.kind = parse_transform_kind(it->second);
  if (auto it = f.meta.find("grid"); it != f.meta.end()) r.grid = parse_numbers(it->second);
  for (const auto& row : f.rows) {
    r.labels.push_back(static_cast<int>(parse_number(row[1])));
    r.errors.push_back(parse_number(row[2]));
    auto [it, fresh] = r.per_class.try_emplace(r.labels.back(), r.errors.back(), r.errors.back());
    if (!fresh) {
      it->second.first = std::min(it->second.first, r.errors.back());
      it->second.second = std::max(it->second.second, r.errors.back());
    }
  }
  return r;
}

void write_calibration_csv(std::ostream& out, const CalibrationReport& r) {
  out << "metric,value\n";
  out << "nll," << format_number(r.nll) << "\n";
  out << "brier," << format_number(r.brier) << "\n";
  out << "accuracy," << format_number(r.accuracy) << "\n";
  out << "count," << r.count << "\n";
  out << "floored," << r.floored << "\n";
}

CalibrationReport read_calibration_csv(std::istream& in) {
  const auto f = read_csv(in, "metric,value");
  CalibrationReport r;
  for (const auto& row : f.rows) {
    const double v = parse_number(row[1]);
    if (row[0] == "nll") r.nll = v;
    else if (row[0] == "brier") r.brier = v;
    else if (row[0] == "accuracy") r.accuracy = v;
    else if (row[0] == "count") r.count = static_cast<int64_t>(v);
    else if (row[0] == "floored") r.floored = static_cast<int64_t>(v);
    else throw std::invalid_argument("csv: unknown calibration metric '" + row[0] + "'");
  }
  return r;
}

void write_stability_csv(std::ostream& out, const StabilityTrace& t) {
  out << "# layer=" << t.layer << "\n";
  out << "epoch,element,frequency\n";
  for (size_t i = 0; i < t.epochs.size(); ++i) {
    for (int e = 0; e < t.elements; ++e) out << t.epochs[i] << ',' << e << ',' << format_number(t.frequency[i][e]) << '\n';
  }
}

StabilityTrace read_stability_csv(std::istream& in) {
  const auto f = read_csv(in, "epoch,element,frequency");
  StabilityTrace t;
  if (auto it = f.meta.find("layer"); it != f.meta.end()) t.layer = static_cast<int>(parse_number(it->second));
  std::map<int, std::map<int, double>> by_epoch;
  for (const auto& row : f.rows) {
    by_epoch[static_cast<int>(parse_number(row[0]))][static_cast<int>(parse_number(row[1]))] = parse_number(row[2]);
  }
  for (const auto& [epoch, elems] : by_epoch) {
    std::vector<double> shares;
    for (const auto& [e, v] : elems) {
      if (e != static_cast<int>(shares.size())) throw std::invalid_argument("csv: stability elements not contiguous");
      shares.push_back(v);
    }
    t.record(epoch, std::move(shares));
  }
  return t;
}

std::string gnuplot_script(const std::string& csv_name, const std::string& header, const std::string& title) {
  std::ostringstream s;
  s << "set datafile separator ','\nset key outside\nset title '" << title << "'\n";
  const auto cols = split(header, ',');
  if (header.rfind("grid_value,", 0) == 0) {
    s << "set xlabel 'transform'\nset ylabel 'probability'\nset yrange [0:1]\n";
    s << "plot for [c=2:" << cols.size() - 1 << "] '" << csv_name
      << "' every ::1 using 1:c with linespoints title columnheader(c)\n";
  } else if (header == "input_id,class,error") {
    s << "set xlabel 'class'\nset ylabel 'equivariance error (L2 on logits)'\n";
    s << "plot '" << csv_name << "' every ::1 using 2:3 with points pt 7 notitle\n";
  } else if (header == "metric,value") {
    s << "set style data histograms\nset style fill solid\n";
    s << "plot '" << csv_name << "' every ::1::2 using 2:xtic(1) notitle\n";
  } else if (header == "epoch,element,frequency") {
    s << "set xlabel 'epoch'\nset ylabel 'selection frequency'\nset yrange [0:1]\n";
    s << "plot for [e=0:15] '" << csv_name
      << "' every ::1 using 1:($2==e ? $3 : 1/0) with linespoints title sprintf('u%d', e + 1)\n";
  } else {
    throw std::invalid_argument("gnuplot_script: unknown csv header '" + header + "'");
  }
  return s.str();
}

#define VPGC_INSTANTIATE_DIAG(T)                                                                                   \
  template std::vector<double> logits<T>(Network<T>&, const data::ImageDataset&, int);                              \
  template std::vector<std::vector<double>> probabilities<T>(Network<T>&, const data::ImageDataset&, const EvalMode&, \
                                                             int);                                                  \
  template ConfidenceProfile confidence_profile<T>(Network<T>&, const data::ImageDataset&, int64_t, TransformKind,    \
                                                   std::vector<double>, const EvalMode&);                           \
  template EquivarianceErrorReport equivariance_error<T>(Network<T>&, const data::ImageDataset&, TransformKind,      \
                                                         std::vector<double>);                                      \
  template std::vector<double> selection_frequency<T>(Network<T>&, int, const data::ImageDataset&, int, Rng&);       \
  template EquivarianceBound hue_conv_bound<T>(const conv::ConvKernel<T>&, const group::FeatureMap<T>&, int,         \
                                               const std::vector<double>&, const std::vector<double>&);

VPGC_INSTANTIATE_DIAG(float)
VPGC_INSTANTIATE_DIAG(double)

}  // namespace vpgc::diag
