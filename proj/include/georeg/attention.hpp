#pragma once

#include "georeg/core.hpp"
#include "georeg/embedding.hpp"
#include "georeg/io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace georeg {

/// Weights of one attention block: projections, output projection, two
/// layer norms and the 2*d_t wide feed-forward. `wr` is empty for cross-attention.
template <typename Scalar>
struct AttentionBlockWeights {
  RowMatrix<Scalar> wq, wk, wv, wr, wo;
  RowMatrix<Scalar> ff1, ff1_bias, ff2, ff2_bias;
  RowMatrix<Scalar> norm1_gain, norm1_bias, norm2_gain, norm2_bias;
};

/// All parameters of one geometric transformer stack. Self and cross blocks
/// are shared between the two clouds, one of each per stage.
template <typename Scalar = float>
struct AttentionWeights {
  int input_dim = 0;
  int d_t = 0;
  int output_dim = 0;
  int heads = 1;
  RowMatrix<Scalar> w_in, w_out, w_d, w_a;
  std::vector<AttentionBlockWeights<Scalar>> self_blocks;
  std::vector<AttentionBlockWeights<Scalar>> cross_blocks;

  int num_layers() const noexcept { return static_cast<int>(self_blocks.size()); }

  void validate() const {
    if (d_t <= 0 || heads <= 0 || d_t % heads != 0) throw Error(ErrorKind::Config, "d_t must be divisible by heads");
    if (w_in.rows() != input_dim || w_in.cols() != d_t) throw Error(ErrorKind::Config, "w_in shape mismatch");
    if (w_out.rows() != d_t || w_out.cols() != output_dim) throw Error(ErrorKind::Config, "w_out shape mismatch");
    if (w_d.rows() != d_t || w_d.cols() != d_t || w_a.rows() != d_t || w_a.cols() != d_t) {
      throw Error(ErrorKind::Config, "embedding projection shape mismatch");
    }
    if (self_blocks.size() != cross_blocks.size()) throw Error(ErrorKind::Config, "self/cross layer count mismatch");
  }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from SplitMix64, drawn in a
  /// fixed order; biases start at zero and norm gains at one.
  static AttentionWeights random(int input_dim, int d_t, int output_dim, int heads, int num_layers,
                                 std::uint64_t seed) {
    AttentionWeights w;
    w.input_dim = input_dim;
    w.d_t = d_t;
    w.output_dim = output_dim;
    w.heads = heads;
    if (input_dim <= 0 || output_dim <= 0 || num_layers < 0) throw Error(ErrorKind::Config, "bad attention dimensions");
    if (d_t <= 0 || heads <= 0 || d_t % heads != 0) throw Error(ErrorKind::Config, "d_t must be divisible by heads");
    Rng rng(seed);
    auto uniform = [&](int rows, int cols) {
      RowMatrix<Scalar> m(rows, cols);
      const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
      }
      return m;
    };
    auto block = [&](bool with_geometry) {
      AttentionBlockWeights<Scalar> b;
      b.wq = uniform(d_t, d_t);
      b.wk = uniform(d_t, d_t);
      b.wv = uniform(d_t, d_t);
      if (with_geometry) b.wr = uniform(d_t, d_t);
      b.wo = uniform(d_t, d_t);
      b.ff1 = uniform(d_t, 2 * d_t);
      b.ff1_bias = RowMatrix<Scalar>::Zero(1, 2 * d_t);
      b.ff2 = uniform(2 * d_t, d_t);
      b.ff2_bias = RowMatrix<Scalar>::Zero(1, d_t);
      b.norm1_gain = RowMatrix<Scalar>::Ones(1, d_t);
      b.norm1_bias = RowMatrix<Scalar>::Zero(1, d_t);
      b.norm2_gain = RowMatrix<Scalar>::Ones(1, d_t);
      b.norm2_bias = RowMatrix<Scalar>::Zero(1, d_t);
      return b;
    };
    w.w_in = uniform(input_dim, d_t);
    w.w_d = uniform(d_t, d_t);
    w.w_a = uniform(d_t, d_t);
    for (int l = 0; l < num_layers; ++l) {
      w.self_blocks.push_back(block(true));
      w.cross_blocks.push_back(block(false));
    }
    w.w_out = uniform(d_t, output_dim);
    return w;
  }

  /// Every matrix keyed by a stable name, in serialization order.
  std::vector<std::pair<std::string, const RowMatrix<Scalar>*>> named() const {
    std::vector<std::pair<std::string, const RowMatrix<Scalar>*>> out;
    out.emplace_back("w_in", &w_in);
    out.emplace_back("w_d", &w_d);
    out.emplace_back("w_a", &w_a);
    auto add_block = [&](const std::string& prefix, const AttentionBlockWeights<Scalar>& b) {
      out.emplace_back(prefix + ".wq", &b.wq);
      out.emplace_back(prefix + ".wk", &b.wk);
      out.emplace_back(prefix + ".wv", &b.wv);
      if (b.wr.size() > 0) out.emplace_back(prefix + ".wr", &b.wr);
      out.emplace_back(prefix + ".wo", &b.wo);
      out.emplace_back(prefix + ".ff1", &b.ff1);
      out.emplace_back(prefix + ".ff1_bias", &b.ff1_bias);
      out.emplace_back(prefix + ".ff2", &b.ff2);
      out.emplace_back(prefix + ".ff2_bias", &b.ff2_bias);
      out.emplace_back(prefix + ".norm1_gain", &b.norm1_gain);
      out.emplace_back(prefix + ".norm1_bias", &b.norm1_bias);
      out.emplace_back(prefix + ".norm2_gain", &b.norm2_gain);
      out.emplace_back(prefix + ".norm2_bias", &b.norm2_bias);
    };
    for (std::size_t l = 0; l < self_blocks.size(); ++l) {
      add_block("layer" + std::to_string(l) + ".self", self_blocks[l]);
      add_block("layer" + std::to_string(l) + ".cross", cross_blocks[l]);
    }
    out.emplace_back("w_out", &w_out);
    return out;
  }
};

// Weight file: "GRWT", u32 layer count, then per matrix u32 name length, name
// bytes, u32 rows, u32 cols and row-major f32 values until end of file. The
// head count travels as the 1x1 matrix "meta.heads".

template <typename Scalar>
void save_weights(const std::filesystem::path& path, const AttentionWeights<Scalar>& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write("GRWT", 4);
  detail::write_le(out, static_cast<std::uint32_t>(w.num_layers()));
  auto put = [&](const std::string& name, const RowMatrix<Scalar>& m) {
    detail::write_le(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le(out, static_cast<std::uint32_t>(m.rows()));
    detail::write_le(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::write_le(out, static_cast<float>(m(r, c)));
    }
  };
  RowMatrix<Scalar> heads(1, 1);
  heads(0, 0) = static_cast<Scalar>(w.heads);
  put("meta.heads", heads);
  for (const auto& [name, m] : w.named()) put(name, *m);
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

template <typename Scalar = float>
AttentionWeights<Scalar> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GRWT", 4) != 0) throw Error(ErrorKind::Io, path.string() + ": bad weight magic");
  const auto layers = detail::read_le<std::uint32_t>(in);
  std::map<std::string, RowMatrix<Scalar>> table;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto len = detail::read_le<std::uint32_t>(in);
    if (len > 4096) throw Error(ErrorKind::Io, "implausible matrix name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = detail::read_le<std::uint32_t>(in);
    const auto cols = detail::read_le<std::uint32_t>(in);
    RowMatrix<Scalar> m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(detail::read_le<float>(in));
    }
    table[name] = std::move(m);
  }
  auto take = [&](const std::string& name) {
    auto it = table.find(name);
    if (it == table.end()) throw Error(ErrorKind::Io, "weight file lacks matrix '" + name + "'");
    return it->second;
  };
  AttentionWeights<Scalar> w;
  w.heads = static_cast<int>(take("meta.heads")(0, 0));
  w.w_in = take("w_in");
  w.w_d = take("w_d");
  w.w_a = take("w_a");
  w.w_out = take("w_out");
  w.input_dim = static_cast<int>(w.w_in.rows());
  w.d_t = static_cast<int>(w.w_in.cols());
  w.output_dim = static_cast<int>(w.w_out.cols());
  auto block = [&](const std::string& prefix, bool with_geometry) {
    AttentionBlockWeights<Scalar> b;
    b.wq = take(prefix + ".wq");
    b.wk = take(prefix + ".wk");
    b.wv = take(prefix + ".wv");
    if (with_geometry) b.wr = take(prefix + ".wr");
    b.wo = take(prefix + ".wo");
    b.ff1 = take(prefix + ".ff1");
    b.ff1_bias = take(prefix + ".ff1_bias");
    b.ff2 = take(prefix + ".ff2");
    b.ff2_bias = take(prefix + ".ff2_bias");
    b.norm1_gain = take(prefix + ".norm1_gain");
    b.norm1_bias = take(prefix + ".norm1_bias");
    b.norm2_gain = take(prefix + ".norm2_gain");
    b.norm2_bias = take(prefix + ".norm2_bias");
    return b;
  };
  for (std::uint32_t l = 0; l < layers; ++l) {
    w.self_blocks.push_back(block("layer" + std::to_string(l) + ".self", true));
    w.cross_blocks.push_back(block("layer" + std::to_string(l) + ".cross", false));
  }
  w.validate();
  return w;
}

namespace detail {

/// Product with double accumulation; the result is rounded back to Scalar.
template <typename Scalar, typename A, typename B>
RowMatrix<Scalar> matmul(const A& a, const B& b) {
  return (a.template cast<double>() * b.template cast<double>()).template cast<Scalar>();
}

template <typename Scalar>
void layer_norm_rows(RowMatrix<double>& x, const RowMatrix<Scalar>& gain, const RowMatrix<Scalar>& bias) {
  constexpr double kEps = 1e-5;
  const auto d = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    const double inv = 1.0 / std::sqrt(var + kEps);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      x(r, c) = (x(r, c) - mean) * inv * static_cast<double>(gain(0, c)) + static_cast<double>(bias(0, c));
    }
  }
}

/// In-place numerically stable softmax of one row.
inline void softmax_row(double* row, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
}

}  // namespace detail

/// Attention output before the block wrapper, plus the per-head attention
/// rows a_{i,j} (head-major, each n_query x n_key).
template <typename Scalar>
struct AttentionResult {
  RowMatrix<Scalar> z;
  std::vector<RowMatrix<double>> weights;
};

/// z_i = sum_j a_ij (x_j W^V) with a = softmax_j((x_i W^Q)(x_j W^K + r_ij W^R)^T / sqrt(d_head)),
/// evaluated per head on the matching slice of channels.
template <typename Scalar>
AttentionResult<Scalar> attend_self(const RowMatrix<Scalar>& x, const GeoEmbeddingTensor<Scalar>& geo,
                                    const AttentionBlockWeights<Scalar>& w, int heads) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (geo.d0 != n || geo.d1 != n) throw Error(ErrorKind::InvalidInput, "feature rows do not match embedding size");
  if (geo.d2 != d || static_cast<std::size_t>(w.wq.rows()) != d) {
    throw Error(ErrorKind::InvalidInput, "feature width does not match d_t");
  }
  if (w.wr.size() == 0) throw Error(ErrorKind::InvalidInput, "self-attention block lacks W^R");
  if (heads <= 0 || d % static_cast<std::size_t>(heads) != 0) throw Error(ErrorKind::Config, "d_t must be divisible by heads");
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const RowMatrix<double> xd = x.template cast<double>();
  const RowMatrix<double> q = xd * w.wq.template cast<double>();
  const RowMatrix<double> k = xd * w.wk.template cast<double>();
  const RowMatrix<double> v = xd * w.wv.template cast<double>();
  const RowMatrix<double> wr = w.wr.template cast<double>();

  AttentionResult<Scalar> out;
  RowMatrix<double> z = RowMatrix<double>::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<double> qr(d);
  for (int h = 0; h < heads; ++h) {
    const std::size_t c0 = static_cast<std::size_t>(h) * dh;
    RowMatrix<double> a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      // q_i . (r_ij W^R)_head == (W^R_head q_i^head) . r_ij
      for (std::size_t r = 0; r < d; ++r) {
        double s = 0.0;
        for (std::size_t c = c0; c < c0 + dh; ++c) s += wr(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        qr[r] = s;
      }
      double* row = a.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = c0; c < c0 + dh; ++c) s += q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) * k(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
        const Scalar* r_ij = geo.at(i, j);
        for (std::size_t r = 0; r < d; ++r) s += qr[r] * static_cast<double>(r_ij[r]);
        row[j] = s * scale;
      }
      detail::softmax_row(row, n);
    }
    z.middleCols(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(dh)) = a * v.middleCols(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(dh));
    out.weights.push_back(std::move(a));
  }
  out.z = z.template cast<Scalar>();
  return out;
}

/// z^P_i = sum_j a_ij (x^Q_j W^V) with a = softmax_j((x^P_i W^Q)(x^Q_j W^K)^T / sqrt(d_head)).
template <typename Scalar>
AttentionResult<Scalar> attend_cross(const RowMatrix<Scalar>& x_p, const RowMatrix<Scalar>& x_q,
                                     const AttentionBlockWeights<Scalar>& w, int heads) {
  const auto d = static_cast<std::size_t>(x_p.cols());
  if (static_cast<std::size_t>(x_q.cols()) != d || static_cast<std::size_t>(w.wq.rows()) != d) {
    throw Error(ErrorKind::InvalidInput, "cross-attention feature widths must equal d_t");
  }
  if (x_q.rows() == 0) throw Error(ErrorKind::InvalidInput, "cross-attention needs at least one key row");
  if (heads <= 0 || d % static_cast<std::size_t>(heads) != 0) throw Error(ErrorKind::Config, "d_t must be divisible by heads");
  const auto dh = static_cast<Eigen::Index>(d / static_cast<std::size_t>(heads));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const RowMatrix<double> q = x_p.template cast<double>() * w.wq.template cast<double>();
  const RowMatrix<double> k = x_q.template cast<double>() * w.wk.template cast<double>();
  const RowMatrix<double> v = x_q.template cast<double>() * w.wv.template cast<double>();

  AttentionResult<Scalar> out;
  RowMatrix<double> z = RowMatrix<double>::Zero(x_p.rows(), static_cast<Eigen::Index>(d));
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    RowMatrix<double> a = q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < a.rows(); ++i) detail::softmax_row(a.data() + i * a.cols(), static_cast<std::size_t>(a.cols()));
    z.middleCols(c0, dh) = a * v.middleCols(c0, dh);
    out.weights.push_back(std::move(a));
  }
  out.z = z.template cast<Scalar>();
  return out;
}

/// y = LN(x + z W_o); out = LN(y + FF(y)) with FF(y) = relu(y W_1 + b_1) W_2 + b_2.
template <typename Scalar>
RowMatrix<Scalar> transformer_block(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& z,
                                    const AttentionBlockWeights<Scalar>& w) {
  RowMatrix<double> y = x.template cast<double>() + z.template cast<double>() * w.wo.template cast<double>();
  detail::layer_norm_rows(y, w.norm1_gain, w.norm1_bias);
  RowMatrix<double> hidden = y * w.ff1.template cast<double>();
  hidden.rowwise() += w.ff1_bias.template cast<double>().row(0);
  hidden = hidden.cwiseMax(0.0);
  RowMatrix<double> ff = hidden * w.ff2.template cast<double>();
  ff.rowwise() += w.ff2_bias.template cast<double>().row(0);
  y += ff;
  detail::layer_norm_rows(y, w.norm2_gain, w.norm2_bias);
  return y.template cast<Scalar>();
}

template <typename Scalar>
RowMatrix<Scalar> geometric_self_attention(const RowMatrix<Scalar>& x, const GeoEmbeddingTensor<Scalar>& geo,
                                           const AttentionBlockWeights<Scalar>& w, int heads) {
  return transformer_block(x, attend_self(x, geo, w, heads).z, w);
}

template <typename Scalar>
RowMatrix<Scalar> feature_cross_attention(const RowMatrix<Scalar>& x_p, const RowMatrix<Scalar>& x_q,
                                          const AttentionBlockWeights<Scalar>& w, int heads) {
  return transformer_block(x_p, attend_cross(x_p, x_q, w, heads).z, w);
}

template <typename Scalar>
struct StackOutput {
  RowMatrix<Scalar> h_p, h_q;
};

/// Input projection, `num_stages` rounds of (self P, self Q, cross P<-Q,
/// cross Q<-updated P), then output projection.
template <typename Scalar, typename FeatP, typename FeatQ>
StackOutput<Scalar> transformer_stack(const FeatP& f_p, const FeatQ& f_q, const PointCloud& sp_p,
                                      const PointCloud& sp_q, const AttentionWeights<Scalar>& w,
                                      const EmbeddingConfig& cfg, int num_stages) {
  w.validate();
  if (f_p.cols() != w.input_dim || f_q.cols() != w.input_dim) {
    throw Error(ErrorKind::InvalidInput, "backbone feature width does not match w_in");
  }
  if (static_cast<std::size_t>(f_p.rows()) != sp_p.size() || static_cast<std::size_t>(f_q.rows()) != sp_q.size()) {
    throw Error(ErrorKind::InvalidInput, "feature rows do not match superpoint counts");
  }
  if (num_stages < 0 || num_stages > w.num_layers()) throw Error(ErrorKind::Config, "num_stages exceeds weight layers");
  if (cfg.d_t != w.d_t) throw Error(ErrorKind::Config, "embedding d_t does not match attention d_t");

  RowMatrix<Scalar> x_p = detail::matmul<Scalar>(f_p, w.w_in);
  RowMatrix<Scalar> x_q = detail::matmul<Scalar>(f_q, w.w_in);
  if (num_stages > 0) {
    const auto geo_p = geometric_structure_embedding<Scalar>(sp_p, cfg, w.w_d, w.w_a);
    const auto geo_q = geometric_structure_embedding<Scalar>(sp_q, cfg, w.w_d, w.w_a);
    for (int t = 0; t < num_stages; ++t) {
      const auto& self_w = w.self_blocks[static_cast<std::size_t>(t)];
      const auto& cross_w = w.cross_blocks[static_cast<std::size_t>(t)];
      const RowMatrix<Scalar> s_p = geometric_self_attention(x_p, geo_p, self_w, w.heads);
      const RowMatrix<Scalar> s_q = geometric_self_attention(x_q, geo_q, self_w, w.heads);
      x_p = feature_cross_attention(s_p, s_q, cross_w, w.heads);
      x_q = feature_cross_attention(s_q, x_p, cross_w, w.heads);
    }
  }
  return {detail::matmul<Scalar>(x_p, w.w_out), detail::matmul<Scalar>(x_q, w.w_out)};
}

}  // namespace georeg
