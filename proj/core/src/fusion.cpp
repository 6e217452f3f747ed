#include "mmpid/fusion.hpp"

#include <stdexcept>
#include <string>

#include "mmpid/numerics.hpp"

namespace mmpid {

namespace {

constexpr std::array<std::string_view, kSlotCount> kSlotNames = {
    "face_vlad", "face_avg", "face_quality", "head", "body", "audio"};

void require_finite(const Matrix& m, const char* stage) {
  if (!m.all_finite()) throw std::runtime_error(std::string("mma_fuse: non-finite values in ") + stage);
}

}  // namespace

std::string_view slot_name(std::size_t slot) {
  if (slot >= kSlotCount) throw std::out_of_range("slot index out of range");
  return kSlotNames[slot];
}

std::size_t slot_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kSlotCount; ++i)
    if (kSlotNames[i] == name) return i;
  throw std::invalid_argument("unknown feature slot: " + std::string(name));
}

Matrix mma_fuse(const Matrix& x, const Matrix& w_f, double gamma, MmaCache* cache) {
  if (w_f.cols() != x.rows()) {
    throw std::invalid_argument("mma_fuse: W_F is " + std::to_string(w_f.rows()) + "x" +
                                std::to_string(w_f.cols()) + " but X has " + std::to_string(x.rows()) + " rows");
  }
  require_finite(x, "input X");
  Matrix f = matmul(w_f, x);
  require_finite(f, "projection F");
  const Matrix z = gram(f);
  require_finite(z, "Gram matrix Z");
  Matrix y = column_softmax(z);
  Matrix xy = matmul(x, y);
  Matrix o = x;
  auto od = o.data();
  auto xyd = xy.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += gamma * xyd[i];
  require_finite(o, "output O");
  if (cache) {
    cache->x = x;
    cache->f = std::move(f);
    cache->y = std::move(y);
    cache->xy = std::move(xy);
  }
  return o;
}

void mma_backward(const MmaCache& cache, const Matrix& w_f, double gamma, const Matrix& d_o, Matrix& d_x,
                  Matrix& d_w_f, double& d_gamma) {
  const std::size_t m = cache.y.rows();
  d_gamma += dot(d_o.data(), cache.xy.data());

  // O = X + gamma X Y
  d_x = d_o + gamma * matmul_nt(d_o, cache.y);
  Matrix d_y = gamma * matmul_tn(cache.x, d_o);

  // Column softmax: dZ(i,j) = Y(i,j) (dY(i,j) - sum_k Y(k,j) dY(k,j))
  Matrix d_z(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) s += cache.y(k, j) * d_y(k, j);
    for (std::size_t i = 0; i < m; ++i) d_z(i, j) = cache.y(i, j) * (d_y(i, j) - s);
  }
  // Z = F^T F  =>  dF = F (dZ + dZ^T)
  Matrix sym = d_z + d_z.transpose();
  const Matrix d_f = matmul(cache.f, sym);
  // F = W_F X
  const Matrix dw = matmul_nt(d_f, cache.x);
  auto acc = d_w_f.data();
  auto src = dw.data();
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
  d_x = d_x + matmul_tn(w_f, d_f);
}

std::vector<double> flatten_columns(const Matrix& o) {
  std::vector<double> v(o.size());
  for (std::size_t j = 0; j < o.cols(); ++j)
    for (std::size_t r = 0; r < o.rows(); ++r) v[j * o.rows() + r] = o(r, j);
  return v;
}

Matrix unflatten_columns(std::span<const double> v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) throw std::invalid_argument("unflatten_columns: size mismatch");
  Matrix o(rows, cols);
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t r = 0; r < rows; ++r) o(r, j) = v[j * rows + r];
  return o;
}

}  // namespace mmpid
