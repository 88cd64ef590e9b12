#include "usev/losses.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "usev/dsp.hpp"
#include "usev/error.hpp"

namespace usev {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    fail(ErrorKind::Shape, std::string(what) + ": estimate has " + std::to_string(a) +
                               " samples, reference has " + std::to_string(b));
}

double residual_energy(std::span<const double> est, std::span<const double> ref) {
  double acc = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double d = est[i] - ref[i];
    acc += d * d;
  }
  return acc;
}

std::vector<double> pick(std::span<const double> x, const std::vector<std::size_t>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
  return out;
}

void check_sdr_reference(double ref_energy) {
  require(ref_energy > 0.0, ErrorKind::DegenerateInput,
          "SDR loss requested on a segment whose reference is silent");
}

}  // namespace

double LossWeights::of(Scenario s) const {
  switch (s) {
    case Scenario::QQ: return alpha;
    case Scenario::SQ: return beta;
    case Scenario::SS: return gamma;
    case Scenario::QS: return delta;
  }
  return 0.0;
}

void LossWeights::validate() const {
  for (double v : {alpha, beta, gamma, delta})
    require(std::isfinite(v) && v >= 0.0, ErrorKind::Parameter,
            "loss weights must be finite and nonnegative, got " + str());
  require(alpha + beta + gamma + delta > 0.0, ErrorKind::Parameter,
          "loss weights must not all be zero");
}

std::string LossWeights::str() const {
  std::ostringstream os;
  os << alpha << '-' << beta << '-' << gamma << '-' << delta;
  return os.str();
}

LossWeights LossWeights::parse(const std::string& s) {
  // '-' doubles as a separator (except inside an exponent), so negative
  // weights cannot be written; validate() rejects them anyway.
  std::string t = s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const bool exponent = i > 0 && (t[i - 1] == 'e' || t[i - 1] == 'E');
    if (t[i] == ',' || (t[i] == '-' && !exponent)) t[i] = ' ';
  }
  std::istringstream is(t);
  LossWeights w;
  if (!(is >> w.alpha >> w.beta >> w.gamma >> w.delta))
    fail(ErrorKind::Parameter, "cannot parse loss weights '" + s + "' (expected a-b-c-d)");
  std::string rest;
  if (is >> rest) fail(ErrorKind::Parameter, "trailing text in loss weights '" + s + "'");
  w.validate();
  return w;
}

double loss_uniform(std::span<const double> est, std::span<const double> ref) {
  check_lengths(est.size(), ref.size(), "loss_uniform");
  return -10.0 * std::log10((energy(ref) + kEpsilon) / (residual_energy(est, ref) + kEpsilon));
}

double loss_sdr(std::span<const double> est, std::span<const double> ref) {
  check_lengths(est.size(), ref.size(), "loss_sdr");
  return -10.0 * std::log10(energy(ref) / (residual_energy(est, ref) + kEpsilon) + kEpsilon);
}

double loss_energy(std::span<const double> est) {
  return 10.0 * std::log10(energy(est) + kEpsilon);
}

double loss_differentiated(std::span<const double> est, std::span<const double> ref,
                           const ScenarioTrack& track, const LossWeights& w) {
  check_lengths(est.size(), ref.size(), "loss_differentiated");
  check_lengths(est.size(), track.clip_len, "loss_differentiated (track)");
  double total = 0.0;
  for (Scenario k : kAllScenarios) {
    const auto idx = track.indices_of(k);
    if (idx.empty()) continue;
    const auto e = pick(est, idx);
    double term;
    if (target_active(k)) {
      const auto r = pick(ref, idx);
      check_sdr_reference(energy(r));
      term = loss_sdr(e, r);
    } else {
      term = loss_energy(e);
    }
    total += w.of(k) * term;
  }
  return total;
}

ad::Tensor loss_uniform(const ad::Tensor& est, std::span<const double> ref) {
  check_lengths(est.numel(), ref.size(), "loss_uniform");
  auto r = ad::Tensor::from({ref.size()}, {ref.begin(), ref.end()});
  auto err = ad::add_scalar(ad::sum_squares(ad::sub(est, r)), kEpsilon);
  auto num = ad::Tensor::scalar(energy(ref) + kEpsilon);
  return ad::scale(ad::log10(ad::div(num, err)), -10.0);
}

ad::Tensor loss_sdr(const ad::Tensor& est, std::span<const double> ref) {
  check_lengths(est.numel(), ref.size(), "loss_sdr");
  auto r = ad::Tensor::from({ref.size()}, {ref.begin(), ref.end()});
  auto err = ad::add_scalar(ad::sum_squares(ad::sub(est, r)), kEpsilon);
  auto num = ad::Tensor::scalar(energy(ref));
  return ad::scale(ad::log10(ad::add_scalar(ad::div(num, err), kEpsilon)), -10.0);
}

ad::Tensor loss_energy(const ad::Tensor& est) {
  return ad::scale(ad::log10(ad::add_scalar(ad::sum_squares(est), kEpsilon)), 10.0);
}

ad::Tensor loss_differentiated(const ad::Tensor& est, std::span<const double> ref,
                               const ScenarioTrack& track, const LossWeights& w) {
  check_lengths(est.numel(), ref.size(), "loss_differentiated");
  check_lengths(est.numel(), track.clip_len, "loss_differentiated (track)");
  ad::Tensor total;
  for (Scenario k : kAllScenarios) {
    const auto idx = track.indices_of(k);
    if (idx.empty()) continue;
    auto e = ad::gather_rows(est, idx);
    ad::Tensor term;
    if (target_active(k)) {
      const auto r = pick(ref, idx);
      check_sdr_reference(energy(r));
      term = loss_sdr(e, r);
    } else {
      term = loss_energy(e);
    }
    term = ad::scale(term, w.of(k));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total.defined() ? total : ad::Tensor::scalar(0.0);
}

}  // namespace usev
