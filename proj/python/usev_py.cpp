// Python bindings: numpy in, numpy out.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "usev/checkpoint.hpp"
#include "usev/dsp.hpp"
#include "usev/error.hpp"
#include "usev/harness.hpp"
#include "usev/losses.hpp"
#include "usev/manifest.hpp"
#include "usev/metrics.hpp"
#include "usev/model.hpp"

namespace py = pybind11;
using namespace usev;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> vec(const Array& a) {
  if (a.ndim() != 1) throw Error(ErrorKind::Shape, "expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

Array arr(const std::vector<double>& v) { return Array(static_cast<py::ssize_t>(v.size()), v.data()); }

Array arr2(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return Array({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)}, v.data());
}

ActivityMask mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  return ActivityMask(a.data(), a.data() + a.size());
}

ScenarioTrack track_of(const std::vector<std::string>& labels) {
  std::vector<Scenario> s;
  s.reserve(labels.size());
  for (const auto& l : labels) s.push_back(parse_scenario(l));
  return track_from_labels(s);
}

py::list segments(const ScenarioTrack& t) {
  py::list out;
  for (const auto& s : t.segments) out.append(py::make_tuple(s.start, s.end, std::string(to_string(s.kind))));
  return out;
}

VisemeMatrix visemes_of(const Array& a, double fps) {
  if (a.ndim() != 2) throw Error(ErrorKind::Shape, "visemes must be a 2-D array");
  return {std::vector<double>(a.data(), a.data() + a.size()), static_cast<std::size_t>(a.shape(0)),
          static_cast<std::size_t>(a.shape(1)), fps};
}

py::dict record_dict(const MixtureRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["sample_rate"] = r.mixture.sample_rate;
  d["mixture"] = arr(r.mixture.samples);
  d["target"] = arr(r.target_truth.samples);
  d["visemes"] = arr2(r.visemes.data, r.visemes.frames, r.visemes.dim);
  d["segments"] = segments(r.track);
  d["labels"] = [&] {
    py::list l;
    for (auto s : r.track.expand()) l.append(std::string(to_string(s)));
    return l;
  }();
  d["effective_visual_ratio"] = r.effective_visual_ratio;
  return d;
}

}  // namespace

PYBIND11_MODULE(_usev, m) {
  m.doc() = "Universal speaker extraction toolkit";

  static py::exception<Error> err(m, "UsevError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(err, e.what());
    }
  });

  m.attr("EPSILON") = kEpsilon;

  m.def("frame_signal", [](const Array& x, std::size_t frame_len, std::size_t hop) {
    const auto f = frame_signal(vec(x), frame_len, hop);
    return arr2(f.data, f.num_frames, f.frame_len);
  }, py::arg("x"), py::arg("frame_len"), py::arg("hop"));
  m.def("overlap_add", [](const Array& frames, std::size_t hop) {
    if (frames.ndim() != 2) throw Error(ErrorKind::Shape, "frames must be a 2-D array");
    std::vector<double> v(frames.data(), frames.data() + frames.size());
    return arr(overlap_add(v, frames.shape(0), frames.shape(1), hop));
  }, py::arg("frames"), py::arg("hop"));
  m.def("energy", [](const Array& x) { return energy(vec(x)); });
  m.def("scale_to_snr", [](const Array& ref, const Array& sig, double snr_db) {
    return arr(scale_to_snr(vec(ref), vec(sig), snr_db));
  }, py::arg("reference"), py::arg("signal"), py::arg("snr_db"));
  m.def("measure_snr_db", [](const Array& ref, const Array& sig) {
    return measure_snr_db(vec(ref), vec(sig));
  });

  m.def("label_scenarios", [](const py::array_t<bool>& t, const py::array_t<bool>& i) {
    return segments(label_scenarios(mask(t), mask(i)));
  }, py::arg("target"), py::arg("interference"),
     "List of (start, end, kind) maximal runs.");
  m.def("overlap_ratio", [](const py::array_t<bool>& t, const py::array_t<bool>& i) {
    return overlap_ratio(label_scenarios(mask(t), mask(i)));
  }, py::arg("target"), py::arg("interference"));
  m.def("overlap_bucket", [](std::optional<double> r) { return std::string(to_string(overlap_bucket(r))); });

  m.def("loss_uniform", [](const Array& e, const Array& s) { return loss_uniform(vec(e), vec(s)); });
  m.def("loss_sdr", [](const Array& e, const Array& s) { return loss_sdr(vec(e), vec(s)); });
  m.def("loss_energy", [](const Array& e) { return loss_energy(vec(e)); });
  m.def("loss_differentiated",
        [](const Array& e, const Array& s, const std::vector<std::string>& labels,
           std::array<double, 4> w) {
          return loss_differentiated(vec(e), vec(s), track_of(labels),
                                     LossWeights{w[0], w[1], w[2], w[3]});
        },
        py::arg("estimate"), py::arg("reference"), py::arg("labels"),
        py::arg("weights") = std::array<double, 4>{0.005, 1.0, 1.0, 0.005});
  m.def("si_sdr", [](const Array& e, const Array& s) { return si_sdr(vec(e), vec(s)); });
  m.def("power_db_per_s", [](const Array& e, int sr) { return power_db_per_s(vec(e), sr); },
        py::arg("estimate"), py::arg("sample_rate"));

  m.def("generate_clip", [](std::uint64_t seed, std::uint64_t index, bool noisy) {
    CorpusConfig cfg;
    cfg.noisy = noisy;
    return record_dict(generate_clip(cfg, seed, index));
  }, py::arg("seed"), py::arg("index"), py::arg("noisy") = false);
  m.def("simulate", [](const std::filesystem::path& out, std::size_t count, std::uint64_t seed,
                       unsigned jobs) {
    SimulateOptions opt;
    opt.count = count;
    opt.seed = seed;
    opt.jobs = jobs;
    return simulate_corpus(opt, out).size();
  }, py::arg("out_dir"), py::arg("count"), py::arg("seed"), py::arg("jobs") = 1,
     "Writes a corpus and its manifest.jsonl; returns the clip count.");
  m.def("load_corpus", [](const std::filesystem::path& manifest) {
    py::list out;
    for (const auto& r : load_corpus(manifest)) out.append(record_dict(r));
    return out;
  });

  py::class_<UsevModel>(m, "Model")
      .def(py::init([](const std::string& preset, std::uint64_t seed) {
             if (preset == "desk") return UsevModel(UsevConfig::desk(), seed);
             if (preset == "full") return UsevModel(UsevConfig::full(), seed);
             if (preset == "micro") return UsevModel(UsevConfig::micro(), seed);
             throw Error(ErrorKind::Usage, "unknown preset '" + preset + "'");
           }),
           py::arg("preset") = "desk", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); })
      .def("save", [](const UsevModel& md, const std::filesystem::path& p) { save_model(md, p); })
      .def("parameter_count", &UsevModel::parameter_count, py::arg("trainable_only") = false)
      .def_property_readonly("sample_rate", [](const UsevModel& md) { return md.config().sample_rate; })
      .def_property_readonly("config", [](const UsevModel& md) { return md.config().to_text(); })
      .def("__call__", [](const UsevModel& md, const Array& audio, const Array& visemes) {
        const auto v = visemes_of(visemes, md.config().video_fps);
        py::gil_scoped_release release;
        auto out = md.infer(vec(audio), v);
        py::gil_scoped_acquire acquire;
        return arr(out);
      }, py::arg("audio"), py::arg("visemes"));

  m.def("gradcheck", [](const std::string& scope, std::size_t seeds) {
    const auto rep = gradcheck(scope, seeds);
    py::dict d;
    for (const auto& e : rep.entries) d[py::str(e.name)] = e.max_rel_error;
    return py::make_tuple(rep.passed(), d);
  }, py::arg("scope") = "ops", py::arg("seeds") = 3);
}
