#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vjpsketch/analysis.hpp"
#include "vjpsketch/budget.hpp"
#include "vjpsketch/decomp.hpp"
#include "vjpsketch/sketch.hpp"

namespace py = pybind11;
using namespace vjpsketch;

namespace {

Matrix matrix_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j)
      m(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = r(i, j);
  return m;
}

py::array_t<double> numpy_from_matrix(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      w(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) = m(i, j);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Unbiased randomized vector-Jacobian products: samplers, sketches, "
            "and analysis tools";

  m.def(
      "pstar_from_weights",
      [](const std::vector<double>& w, std::size_t r) {
        const ProbabilityAllocation alloc = pstar_from_weights(w, r);
        return py::make_tuple(alloc.p, alloc.lambda_sqrt);
      },
      py::arg("weights"), py::arg("r"),
      "Water-filling probabilities minimizing sum(w_i / p_i) under sum(p_i) <= r; "
      "returns (p, sqrt_lambda).");

  m.def(
      "correlated_exact_r_sample",
      [](const std::vector<double>& p, std::size_t r, std::uint64_t seed) {
        ProbabilityAllocation alloc;
        alloc.p = p;
        alloc.budget = r;
        for (double v : p)
          if (v > 0.0) ++alloc.support_size;
        Rng rng(seed);
        const IndexSample sample = correlated_exact_r_sample(alloc, rng);
        return py::make_tuple(sample.indices, sample.scales);
      },
      py::arg("p"), py::arg("r"), py::arg("seed"),
      "Systematic draw of exactly r indices with marginals p; returns (indices, scales).");

  m.def(
      "unbiased_lowrank_sketch",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& matrix,
         std::size_t r, std::uint64_t seed) {
        Rng rng(seed);
        const LowRankSketchResult result =
            unbiased_lowrank_sketch(matrix_from_numpy(matrix), r, rng);
        py::dict out;
        out["s"] = numpy_from_matrix(result.s);
        out["i0"] = result.i0;
        out["p"] = result.p;
        out["expected_sq_frobenius"] = result.expected_sq_frobenius;
        return out;
      },
      py::arg("m"), py::arg("r"), py::arg("seed"),
      "Minimal-variance unbiased rank-r sketch of a fixed matrix.");

  m.def(
      "sketched_backward",
      [](const std::string& method,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& g,
         double budget, std::uint64_t seed) {
        SketchOperatorSpec spec = SketchOperatorSpec::parse(method);
        spec.budget_fraction = budget;
        Rng rng(seed);
        const LinearGrads grads = sketched_linear_backward(
            spec, matrix_from_numpy(x), matrix_from_numpy(w), matrix_from_numpy(g), rng);
        return py::make_tuple(numpy_from_matrix(grads.dx), numpy_from_matrix(grads.dw),
                              grads.db);
      },
      py::arg("method"), py::arg("x"), py::arg("w"), py::arg("g"), py::arg("budget"),
      py::arg("seed"),
      "Randomized backward of y = x W^T + b; returns (dx, dw, db), conditionally "
      "unbiased for the exact backward.");

  m.def(
      "estimate_distortion",
      [](const std::string& method,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& g,
         double budget, std::size_t n_draws, std::uint64_t seed) {
        SketchOperatorSpec spec = SketchOperatorSpec::parse(method);
        spec.budget_fraction = budget;
        Rng rng(seed);
        const DistortionReport report = estimate_distortion(
            spec, matrix_from_numpy(w), GradBatch(matrix_from_numpy(g)), n_draws, rng);
        py::dict out;
        out["method"] = report.method;
        out["rank"] = report.rank;
        out["mc_mean"] = report.mc_mean;
        out["std_error"] = report.std_error;
        out["analytic"] = report.analytic ? py::cast(*report.analytic) : py::none();
        return out;
      },
      py::arg("method"), py::arg("w"), py::arg("g"), py::arg("budget"), py::arg("n_draws"),
      py::arg("seed"),
      "Monte-Carlo VJP distortion with the closed form attached where it exists. "
      "g has one column per sample.");

  m.def(
      "svd",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& matrix) {
        const Svd result = svd(matrix_from_numpy(matrix));
        return py::make_tuple(numpy_from_matrix(result.u), result.singular_values,
                              numpy_from_matrix(result.v));
      },
      py::arg("m"), "Thin SVD (u, singular_values, v).");

  m.def(
      "iterations_for_accuracy",
      [](double sigma2, double injected_variance, double beta, double gap, double eps) {
        TradeoffParams params;
        params.sigma2 = sigma2;
        params.injected_variance = injected_variance;
        params.beta = beta;
        params.gap = gap;
        params.eps = eps;
        return iterations_for_accuracy(params);
      },
      py::arg("sigma2"), py::arg("injected_variance"), py::arg("beta"), py::arg("gap"),
      py::arg("eps"));

  m.def(
      "net_gain",
      [](double sigma2, double injected_variance, double rho0, double rho_v) {
        TradeoffParams params;
        params.sigma2 = sigma2;
        params.injected_variance = injected_variance;
        params.rho0 = rho0;
        params.rho_v = rho_v;
        return net_gain(params);
      },
      py::arg("sigma2"), py::arg("injected_variance"), py::arg("rho0"), py::arg("rho_v"),
      "True when the variance-efficiency trade-off favors the sketch.");
}
