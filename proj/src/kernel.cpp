#include "rpcova/kernel.hpp"

#include "rpcova/error.hpp"

namespace rpcova {

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::Epanechnikov: return "epanechnikov";
    case KernelFamily::Biweight: return "biweight";
    case KernelFamily::Triweight: return "triweight";
  }
  return "unknown";
}

std::optional<KernelFamily> parse_kernel_family(std::string_view name) {
  if (name == "epanechnikov") return KernelFamily::Epanechnikov;
  if (name == "biweight") return KernelFamily::Biweight;
  if (name == "triweight") return KernelFamily::Triweight;
  return std::nullopt;
}

double kernel_roughness(KernelFamily family) {
  switch (family) {
    case KernelFamily::Epanechnikov: return 3.0 / 5.0;
    case KernelFamily::Biweight: return 5.0 / 7.0;
    case KernelFamily::Triweight: return 350.0 / 429.0;
  }
  return 0.0;
}

double kernel_second_moment(KernelFamily family) {
  switch (family) {
    case KernelFamily::Epanechnikov: return 1.0 / 5.0;
    case KernelFamily::Biweight: return 1.0 / 7.0;
    case KernelFamily::Triweight: return 1.0 / 9.0;
  }
  return 0.0;
}

void BandwidthSet::validate() const {
  const double all[] = {h1, h2, h3, h4, h5, h_v, h_r1, h_r2, alpha2, alpha3, alpha4};
  for (double v : all) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "bandwidths must be positive");
  }
  if (d < 1) throw Error(ErrorCode::InvalidArgument, "bandwidth dimension must be positive");
}

BandwidthSet BandwidthSet::uniform(double h, int d) {
  BandwidthSet bw;
  bw.h1 = bw.h2 = bw.h3 = bw.h4 = bw.h5 = bw.h_v = bw.h_r1 = bw.h_r2 = h;
  bw.d = d;
  return bw;
}

}  // namespace rpcova
