#include "hsimamba/efficiency.hpp"

namespace hsi {

ComplexityProfile estimate(ModelKind kind, std::uint64_t b, std::uint64_t h, std::uint64_t w,
                           std::uint64_t c, std::uint64_t k, std::uint64_t d) {
  if (b == 0 || h == 0 || w == 0 || c == 0 || d == 0) {
    throw ValueError("estimate: dimensions must be positive");
  }
  ComplexityProfile prof;
  switch (kind) {
    case ModelKind::kTransformer:
      prof.params = c * c + c * h * w;
      prof.flops = b * h * w * c * c;
      prof.params_class = "O(C^2 + CHW)";
      prof.flops_class = "O(BHW · C^2)";
      break;
    case ModelKind::kCnn:
      if (k == 0) throw ValueError("estimate: cnn kernel size must be positive");
      prof.params = k * k * c * c;
      prof.flops = b * h * w * k * k * c;
      prof.params_class = "O(k^2 · C^2)";
      prof.flops_class = "O(BHW · k^2 · C)";
      break;
    case ModelKind::kHsiMamba:
      prof.params = c + h * w;
      prof.flops = b * h * w * c * d;
      prof.params_class = "O(C + HW)";
      prof.flops_class = "O(BHW · C)";
      break;
  }
  return prof;
}

}  // namespace hsi
