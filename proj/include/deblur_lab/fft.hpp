#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace deblur {

using Complex = std::complex<double>;

// Unnormalized forward 2-D DFT of a real h x w plane (row-major).
std::vector<Complex> fft2(const std::vector<double>& plane, std::size_t h, std::size_t w);

// Inverse 2-D DFT scaled by 1/(h*w); returns the real part.
std::vector<double> ifft2_real(const std::vector<Complex>& spectrum, std::size_t h, std::size_t w);

// Zero-pads an odd k x k kernel to h x w and circularly shifts its center to
// the origin, then transforms it (the optical transfer function).
std::vector<Complex> kernel_otf(const std::vector<double>& kernel, std::size_t k, std::size_t h, std::size_t w);

}  // namespace deblur
