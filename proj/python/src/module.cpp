#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fgfp/aup/aup.hpp"
#include "fgfp/errors.hpp"
#include "fgfp/fgf/fit.hpp"
#include "fgfp/fgf/gl.hpp"
#include "fgfp/pipeline/pipeline.hpp"
#include "fgfp/store/checkpoint.hpp"

namespace py = pybind11;
using namespace fgfp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

fgf::FgfSpec spec_of(const std::string& kind, const std::tuple<int, int, int>& dims, bool gain) {
  const auto [ch, kh, kw] = dims;
  return fgf::FgfSpec{fgf::parse_kind(kind), {ch, kh, kw}, gain};
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

py::array_t<double> kernel_array(const std::vector<double>& flat, const fgf::KernelDims& d) {
  py::array_t<double> out(std::vector<py::ssize_t>{d.ch, d.kh, d.kw});
  std::copy(flat.begin(), flat.end(), out.mutable_data());
  return out;
}

py::dict summary_dict(const store::Summary& s) {
  py::dict d;
  d["name"] = s.meta.name;
  d["seed"] = s.meta.seed;
  d["epoch"] = s.meta.epoch;
  d["metrics"] = s.meta.metrics;
  d["input_shape"] = s.input_shape;
  d["num_classes"] = s.num_classes;
  d["logical"] = s.logical();
  d["stored"] = s.stored();
  py::list layers;
  for (const auto& l : s.layers) {
    py::dict e;
    e["id"] = l.id;
    e["kind"] = nn::kind_name(l.kind);
    e["fgf_kind"] = l.fgf_kind ? py::object(py::str(fgf::kind_name(*l.fgf_kind))) : py::none();
    e["dims"] = l.dims;
    e["logical"] = l.logical;
    e["stored"] = l.stored;
    layers.append(e);
  }
  d["layers"] = layers;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fgfp, m) {
  m.doc() = "Fractional Gaussian filters, FGF fitting and checkpoint inspection";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_IOError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);
  py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("gl_trinomial", &fgf::gl_trinomial, py::arg("alpha"));
  m.def("gl_series_weight", &fgf::gl_series_weight, py::arg("alpha"), py::arg("r"));
  m.def("frac_gauss_1d", &fgf::frac_gauss_1d, py::arg("length"), py::arg("alpha"), py::arg("t0"), py::arg("sigma"));

  m.def(
      "param_count",
      [](const std::string& kind, std::tuple<int, int, int> dims, bool gain) {
        return spec_of(kind, dims, gain).param_count();
      },
      py::arg("kind"), py::arg("dims"), py::arg("gain") = false);

  m.def(
      "synthesize",
      [](const std::string& kind, std::tuple<int, int, int> dims, const Array& params, bool gain) {
        const auto spec = spec_of(kind, dims, gain);
        return kernel_array(fgf::synthesize(spec, to_vector(params)), spec.dims);
      },
      py::arg("kind"), py::arg("dims"), py::arg("params"), py::arg("gain") = false,
      "Dense [ch, kh, kw] kernel from one filter's flat parameters.");

  m.def(
      "param_grads",
      [](const std::string& kind, std::tuple<int, int, int> dims, const Array& params, const Array& upstream,
         bool gain) {
        return fgf::param_grads(spec_of(kind, dims, gain), to_vector(params), to_vector(upstream));
      },
      py::arg("kind"), py::arg("dims"), py::arg("params"), py::arg("upstream"), py::arg("gain") = false);

  m.def(
      "fit",
      [](const Array& kernel, const std::string& kind, int restarts, int iters, std::uint64_t seed, bool gain) {
        if (kernel.ndim() != 3) throw DimensionError("kernel must be [ch, kh, kw]");
        nd::TensorD t(nd::Shape{kernel.shape(0), kernel.shape(1), kernel.shape(2)}, to_vector(kernel));
        fgf::FitConfig cfg;
        cfg.restarts = restarts;
        cfg.iters = iters;
        cfg.seed = seed;
        cfg.gain = gain;
        fgf::FitResult r;
        {
          py::gil_scoped_release release;
          r = fgf::fit_fgf_to_kernel(t, fgf::parse_kind(kind), cfg);
        }
        py::dict d;
        d["params"] = r.params;
        d["loss"] = r.loss;
        d["best_restart"] = r.best_restart;
        return d;
      },
      py::arg("kernel"), py::arg("kind") = "3d", py::arg("restarts") = 8, py::arg("iters") = 500,
      py::arg("seed") = 0, py::arg("gain") = false);

  m.def(
      "layer_threshold",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& w,
         double p_r) -> std::optional<std::pair<float, std::size_t>> {
        const auto cut = aup::layer_threshold(std::span<const float>(w.data(), w.size()), p_r);
        if (!cut) return std::nullopt;
        return std::make_pair(cut->threshold, cut->count);
      },
      py::arg("weights"), py::arg("p_r"), "(threshold, count) of the per-layer magnitude cut, None if all zero.");

  m.def("compression_ratio", &pipeline::compression_ratio, py::arg("baseline"), py::arg("compressed"));

  m.def(
      "read_summary", [](const std::filesystem::path& p) { return summary_dict(store::read_summary(p)); },
      py::arg("path"), "Header of a checkpoint: metadata and per-layer parameter counts.");

  m.def(
      "model_digest", [](const std::filesystem::path& p) { return nn::model_digest(store::load(p)); },
      py::arg("path"));

  m.def(
      "export_kernel",
      [](const std::filesystem::path& p, const std::string& layer, int filter) {
        const auto model = store::load(p);
        const auto idx = nn::find_layer(model, layer);
        if (!idx) throw UsageError("no layer named " + layer);
        const auto* f = std::get_if<nn::FgfConv2d>(&model.layers[*idx]);
        if (!f) throw UsageError("layer " + layer + " is not an FGF layer");
        if (filter < 0 || filter >= f->out_channels) throw UsageError("filter index out of range");
        return kernel_array(fgf::synthesize(f->spec, f->filter(filter)), f->spec.dims);
      },
      py::arg("path"), py::arg("layer"), py::arg("filter") = 0);
}
