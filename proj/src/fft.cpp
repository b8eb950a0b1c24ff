#include "mcse/fft.hpp"

#include <unsupported/Eigen/FFT>

#include <vector>

namespace mcse::fft {

namespace {

Eigen::FFT<double>& engine() {
  // Eigen::FFT caches one plan per transform size.
  thread_local Eigen::FFT<double> fft;
  return fft;
}

}  // namespace

ComplexVec forward(const ComplexVec& x) {
  require(x.size() >= 1, errc::invalid_argument, "fft: empty input");
  ComplexVec out(x.size());
  engine().fwd(out.data(), x.data(), static_cast<int>(x.size()));
  return out;
}

ComplexVec inverse(const ComplexVec& x) {
  require(x.size() >= 1, errc::invalid_argument, "ifft: empty input");
  ComplexVec out(x.size());
  engine().inv(out.data(), x.data(), static_cast<int>(x.size()));
  return out;
}

ComplexVec rfft(const RealVec& x, Index nfft) {
  require(nfft >= 2 && nfft % 2 == 0, errc::invalid_argument,
          "rfft: nfft must be even and >= 2");
  require(x.size() <= nfft, errc::invalid_argument,
          "rfft: input longer than nfft");
  ComplexVec padded = ComplexVec::Zero(nfft);
  padded.head(x.size()).real() = x;
  ComplexVec full = forward(padded);
  return full.head(nfft / 2 + 1);
}

RealVec irfft(const ComplexVec& half_spectrum, Index nfft) {
  require(nfft >= 2 && nfft % 2 == 0, errc::invalid_argument,
          "irfft: nfft must be even and >= 2");
  const Index nbins = nfft / 2 + 1;
  require(half_spectrum.size() <= nbins, errc::invalid_argument,
          "irfft: too many bins for nfft");
  ComplexVec full = ComplexVec::Zero(nfft);
  full.head(half_spectrum.size()) = half_spectrum;
  for (Index k = 1; k < nfft / 2; ++k) full[nfft - k] = std::conj(full[k]);
  // Bins 0 and nfft/2 must be real for a real signal; drop any residue.
  full[0] = std::complex<double>(full[0].real(), 0.0);
  full[nfft / 2] = std::complex<double>(full[nfft / 2].real(), 0.0);
  ComplexVec time = inverse(full);
  return time.real();
}

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace mcse::fft
