#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "usev/error.hpp"
#include "usev/harness.hpp"

namespace usev {

using ad::Shape;
using ad::Tensor;

double max_grad_error(const GraphFn& f, std::vector<Tensor> inputs, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
  std::normal_distribution<double> nd;
  const Tensor probe = [&] {
    ad::NoGradGuard g;
    return f(inputs);
  }();
  std::vector<double> r(probe.numel());
  for (auto& v : r) v = nd(rng);
  const Tensor weights = Tensor::from(probe.shape(), r);
  const auto objective = [&] { return ad::sum(ad::mul(f(inputs), weights)); };

  for (auto& t : inputs) t.zero_grad();
  ad::backward(objective());

  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double x0 = d[i];
      double fp, fm;
      {
        ad::NoGradGuard g;
        d[i] = x0 + kFdStep;
        fp = objective().item();
        d[i] = x0 - kFdStep;
        fm = objective().item();
      }
      d[i] = x0;
      const double numeric = (fp - fm) / (2.0 * kFdStep);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double scale = std::max({std::abs(a), std::abs(numeric), kGradScaleFloor});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  }
  return worst;
}

namespace {

struct Case {
  GraphFn f;
  std::vector<Tensor> inputs;
};

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

/// Values with |x| in [lo, hi] and random sign, keeping kinks out of reach.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double lo = 0.1, double hi = 1.5) {
  Tensor t = uniform(std::move(shape), rng, lo, hi);
  std::bernoulli_distribution coin(0.5);
  for (auto& x : t.data())
    if (coin(rng)) x = -x;
  return t;
}

ScenarioTrack random_track(std::size_t n, std::mt19937_64& rng) {
  std::vector<Scenario> labels(n);
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_int_distribution<std::size_t> run(1, std::max<std::size_t>(1, n / 4));
  for (std::size_t i = 0; i < n;) {
    const auto k = static_cast<Scenario>(kind(rng));
    for (std::size_t j = run(rng); j > 0 && i < n; --j) labels[i++] = k;
  }
  return track_from_labels(labels);
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

using CaseFactory = Case (*)(std::mt19937_64&);

Case binary(std::mt19937_64& rng, Tensor (*op)(const Tensor&, const Tensor&), bool positive_b) {
  return {[op](const std::vector<Tensor>& in) { return op(in[0], in[1]); },
          {uniform({3, 4}, rng, -2, 2),
           positive_b ? uniform({3, 4}, rng, 0.5, 2.0) : uniform({3, 4}, rng, -2, 2)}};
}

const std::map<std::string, CaseFactory>& suites() {
  static const std::map<std::string, CaseFactory> m = {
      {"add", [](std::mt19937_64& r) { return binary(r, ad::add, false); }},
      {"sub", [](std::mt19937_64& r) { return binary(r, ad::sub, false); }},
      {"mul", [](std::mt19937_64& r) { return binary(r, ad::mul, false); }},
      {"div", [](std::mt19937_64& r) { return binary(r, ad::div, true); }},
      {"scale",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::scale(in[0], -1.7); },
                     {uniform({5}, r, -2, 2)}};
       }},
      {"add_scalar",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::add_scalar(in[0], 0.3); },
                     {uniform({5}, r, -2, 2)}};
       }},
      {"log10",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::log10(in[0]); },
                     {uniform({6}, r, 0.5, 3.0)}};
       }},
      {"relu",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::relu(in[0]); },
                     {away_from_zero({2, 5}, r)}};
       }},
      {"sigmoid",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::sigmoid(in[0]); },
                     {uniform({2, 5}, r, -3, 3)}};
       }},
      {"tanh",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::tanh(in[0]); },
                     {uniform({2, 5}, r, -3, 3)}};
       }},
      {"prelu",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::prelu(in[0], in[1]); },
                     {away_from_zero({3, 4}, r), uniform({1}, r, 0.05, 0.5)}};
       }},
      {"sum",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::sum(in[0]); },
                     {uniform({3, 4}, r, -2, 2)}};
       }},
      {"sum_squares",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::sum_squares(in[0]); },
                     {uniform({3, 4}, r, -2, 2)}};
       }},
      {"dot", [](std::mt19937_64& r) { return binary(r, ad::dot, false); }},
      {"reshape",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::reshape(in[0], {3, 4}); },
                     {uniform({2, 6}, r, -2, 2)}};
       }},
      {"transpose",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::transpose(in[0]); },
                     {uniform({3, 5}, r, -2, 2)}};
       }},
      {"permute3",
       [](std::mt19937_64& r) {
         static const std::array<std::array<std::size_t, 3>, 6> perms = {
             {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
         const auto p = perms[std::uniform_int_distribution<std::size_t>(0, 5)(r)];
         return Case{[p](const std::vector<Tensor>& in) { return ad::permute3(in[0], p); },
                     {uniform({2, 3, 4}, r, -2, 2)}};
       }},
      {"concat",
       [](std::mt19937_64& r) {
         const std::size_t axis = std::bernoulli_distribution(0.5)(r) ? 1 : 0;
         Tensor a = uniform({2, 3}, r, -2, 2);
         Tensor b = axis == 0 ? uniform({4, 3}, r, -2, 2) : uniform({2, 5}, r, -2, 2);
         return Case{[axis](const std::vector<Tensor>& in) { return ad::concat(in, axis); },
                     {a, b}};
       }},
      {"gather_rows",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) {
                       static const std::vector<std::size_t> rows = {0, 2, 2, 3, 1, 0};
                       return ad::gather_rows(in[0], rows);
                     },
                     {uniform({4, 3}, r, -2, 2)}};
       }},
      {"fit_length",
       [](std::mt19937_64& r) {
         const std::size_t n = std::bernoulli_distribution(0.5)(r) ? 5 : 9;
         return Case{[n](const std::vector<Tensor>& in) { return ad::fit_length(in[0], n); },
                     {uniform({7}, r, -2, 2)}};
       }},
      {"linear",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::linear(in[0], in[1], in[2]); },
                     {uniform({2, 3, 4}, r, -1, 1), uniform({5, 4}, r, -1, 1),
                      uniform({5}, r, -1, 1)}};
       }},
      {"conv1d",
       [](std::mt19937_64& r) {
         const bool grouped = std::bernoulli_distribution(0.5)(r);
         const std::size_t groups = grouped ? 2 : 1, stride = grouped ? 2 : 1,
                           padding = grouped ? 1 : 0;
         return Case{[=](const std::vector<Tensor>& in) {
                       return ad::conv1d(in[0], in[1], in[2], stride, groups, padding);
                     },
                     {uniform({4, 11}, r, -1, 1), uniform({6, 4 / groups, 3}, r, -1, 1),
                      uniform({6}, r, -1, 1)}};
       }},
      {"layer_norm",
       [](std::mt19937_64& r) {
         return Case{
             [](const std::vector<Tensor>& in) { return ad::layer_norm(in[0], in[1], in[2]); },
             {uniform({3, 5}, r, -2, 2), uniform({5}, r, 0.5, 1.5), uniform({5}, r, -1, 1)}};
       }},
      {"global_layer_norm",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) {
                       return ad::global_layer_norm(in[0], in[1], in[2]);
                     },
                     {uniform({3, 5}, r, -2, 2), uniform({5}, r, 0.5, 1.5),
                      uniform({5}, r, -1, 1)}};
       }},
      {"bilstm",
       [](std::mt19937_64& r) {
         const std::size_t S = 2, T = 3, In = 4, H = 3;
         return Case{[](const std::vector<Tensor>& in) {
                       return ad::bilstm(in[0], {in[1], in[2], in[3]}, {in[4], in[5], in[6]});
                     },
                     {uniform({S, T, In}, r, -1, 1), uniform({4 * H, In}, r, -0.8, 0.8),
                      uniform({4 * H, H}, r, -0.8, 0.8), uniform({4 * H}, r, -0.5, 0.5),
                      uniform({4 * H, In}, r, -0.8, 0.8), uniform({4 * H, H}, r, -0.8, 0.8),
                      uniform({4 * H}, r, -0.5, 0.5)}};
       }},
      {"segment_chunks",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::segment_chunks(in[0], 4); },
                     {uniform({3, 9}, r, -2, 2)}};
       }},
      {"aggregate_chunks",
       [](std::mt19937_64& r) {
         const auto l = ad::chunk_layout(9, 4);
         return Case{
             [](const std::vector<Tensor>& in) { return ad::aggregate_chunks(in[0], 9); },
             {uniform({3, 4, l.num_chunks}, r, -2, 2)}};
       }},
      {"overlap_add",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return ad::overlap_add(in[0], 2); },
                     {uniform({5, 4}, r, -2, 2)}};
       }},
      {"loss_sdr",
       [](std::mt19937_64& r) {
         auto ref = random_vec(24, r);
         return Case{[ref](const std::vector<Tensor>& in) { return loss_sdr(in[0], ref); },
                     {uniform({24}, r, -2, 2)}};
       }},
      {"loss_uniform",
       [](std::mt19937_64& r) {
         auto ref = random_vec(24, r);
         return Case{[ref](const std::vector<Tensor>& in) { return loss_uniform(in[0], ref); },
                     {uniform({24}, r, -2, 2)}};
       }},
      {"loss_energy",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) { return loss_energy(in[0]); },
                     {uniform({24}, r, -2, 2)}};
       }},
      {"loss_differentiated",
       [](std::mt19937_64& r) {
         const std::size_t n = 32;
         auto track = random_track(n, r);
         auto ref = random_vec(n, r);
         const auto labels = track.expand();
         for (std::size_t i = 0; i < n; ++i)
           if (!target_active(labels[i])) ref[i] = 0.0;
         return Case{[ref, track](const std::vector<Tensor>& in) {
                       return loss_differentiated(in[0], ref, track, LossWeights{});
                     },
                     {uniform({n}, r, -2, 2)}};
       }},
      // Negative control: backward deliberately returns x instead of 2x.
      {"corrupted_square",
       [](std::mt19937_64& r) {
         return Case{[](const std::vector<Tensor>& in) {
                       const Tensor& x = in[0];
                       std::vector<double> v(x.data().begin(), x.data().end());
                       for (auto& e : v) e *= e;
                       return ad::make_op("corrupted_square", x.shape(), std::move(v), {x},
                                          [](ad::Node& self) {
                                            auto& p = *self.parents[0];
                                            auto& g = p.ensure_grad();
                                            for (std::size_t i = 0; i < g.size(); ++i)
                                              g[i] += self.grad[i] * p.value[i];
                                          });
                     },
                     {uniform({4}, r, 0.5, 2.0)}};
       }},
  };
  return m;
}

}  // namespace

std::vector<std::string> gradcheck_op_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : suites())
    if (k != "corrupted_square") names.push_back(k);
  return names;
}

GradcheckEntry gradcheck_op(const std::string& op, std::size_t seeds) {
  const auto it = suites().find(op);
  require(it != suites().end(), ErrorKind::Usage, "no gradient check suite for '" + op + "'");
  GradcheckEntry e{op, seeds, 0.0, kOpTolerance};
  for (std::size_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(0x9c0000ULL + s);
    Case c = it->second(rng);
    e.max_rel_error = std::max(e.max_rel_error, max_grad_error(c.f, c.inputs, s));
  }
  return e;
}

GradcheckEntry gradcheck_model(std::size_t seeds) {
  GradcheckEntry e{"usev_model_micro", seeds, 0.0, kModelTolerance};
  const UsevConfig cfg = UsevConfig::micro();
  const std::size_t len = 18;  // T = 8 encoder frames
  for (std::size_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(0x4d0de1ULL + s);
    const UsevModel model(cfg, s);
    // Perturb biases and norms away from their init so every path is exercised.
    for (const auto& [name, t] : model.named_parameters()) {
      if (!t.requires_grad()) continue;
      Tensor h = t;
      std::uniform_real_distribution<double> u(-0.3, 0.3);
      for (auto& v : h.data()) v += u(rng);
    }
    const Tensor x = uniform({len}, rng, -1, 1);
    const auto vis_frames =
        static_cast<std::size_t>(std::ceil(len * cfg.video_fps / cfg.sample_rate - 1e-9));
    const Tensor v = Tensor::from({vis_frames, cfg.visual_dim},
                                  random_vec(vis_frames * cfg.visual_dim, rng));
    const auto track = random_track(len, rng);
    auto ref = random_vec(len, rng);
    const auto labels = track.expand();
    for (std::size_t i = 0; i < len; ++i)
      if (!target_active(labels[i])) ref[i] = 0.0;
    std::vector<Tensor> inputs = model.trainable();
    inputs.push_back(x);
    const GraphFn f = [&](const std::vector<Tensor>&) {
      return loss_differentiated(model.forward(x, v), ref, track, LossWeights{});
    };
    e.max_rel_error = std::max(e.max_rel_error, max_grad_error(f, inputs, s));
  }
  return e;
}

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const GradcheckEntry& e) { return e.passed(); });
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  for (const auto& e : entries)
    os << std::left << std::setw(22) << e.name << " seeds=" << std::setw(4) << e.seeds
       << " max_rel_err=" << std::scientific << std::setprecision(3) << e.max_rel_error
       << " tol=" << e.tolerance << std::defaultfloat << "  "
       << (e.passed() ? "PASS" : "FAIL") << '\n';
  os << (passed() ? "gradcheck: all passed\n" : "gradcheck: FAILED\n");
  return os.str();
}

GradcheckReport gradcheck(const std::string& scope, std::size_t seeds) {
  require(scope == "ops" || scope == "model" || scope == "all", ErrorKind::Usage,
          "gradcheck scope must be ops, model or all");
  GradcheckReport rep;
  if (scope != "model")
    for (const auto& name : gradcheck_op_names()) rep.entries.push_back(gradcheck_op(name, seeds));
  if (scope != "ops") rep.entries.push_back(gradcheck_model(seeds));
  return rep;
}

}  // namespace usev
