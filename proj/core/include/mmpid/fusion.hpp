#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "mmpid/matrix.hpp"

namespace mmpid {

// Columns of the D x 6 modality feature map.
enum class Slot : std::size_t {
  kFaceVlad = 0,     // NetVLAD over the selected face frames
  kFaceAvg = 1,      // plain average of the selected face frames
  kFaceQuality = 2,  // quality-weighted average of the selected face frames
  kHead = 3,
  kBody = 4,
  kAudio = 5,
};
inline constexpr std::size_t kSlotCount = 6;
using SlotMask = std::array<bool, kSlotCount>;

std::string_view slot_name(std::size_t slot);
// Throws std::invalid_argument for unknown names.
std::size_t slot_from_name(std::string_view name);

// Absent slots are zero columns with present[slot] == false.
struct ModalityFeatureMap {
  Matrix x;  // D x kSlotCount
  SlotMask present{};
};

struct MmaCache {
  Matrix x;   // D x M
  Matrix f;   // D' x M
  Matrix y;   // M x M, column-stochastic
  Matrix xy;  // D x M
};

// Multi-modal attention:
//   F = W_F X,  Z = F^T F,  Y = column_softmax(Z),  O = X + gamma * X Y.
// Throws std::runtime_error naming the stage that produced a non-finite value.
Matrix mma_fuse(const Matrix& x, const Matrix& w_f, double gamma, MmaCache* cache = nullptr);

// Backward of mma_fuse. Writes d_x and accumulates into d_w_f and d_gamma.
void mma_backward(const MmaCache& cache, const Matrix& w_f, double gamma, const Matrix& d_o, Matrix& d_x,
                  Matrix& d_w_f, double& d_gamma);

// Column-major flattening: the D entries of slot j are contiguous.
std::vector<double> flatten_columns(const Matrix& o);
Matrix unflatten_columns(std::span<const double> v, std::size_t rows, std::size_t cols);

}  // namespace mmpid
