#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "jbsde/basis.hpp"
#include "jbsde/bsde.hpp"
#include "jbsde/coefficients.hpp"
#include "jbsde/levy.hpp"

namespace jbsde {

using json = nlohmann::ordered_json;

struct MeasureSpec {
    std::string kind = "power-law";  // power-law | table
    double alpha = 0.5;
    double scale = 1.0;
    double radius = 1.0;
    std::vector<double> table_r, table_rho;  // table kind
    bool operator==(const MeasureSpec&) const = default;
};

// registry name plus numeric parameters; no runtime code loading
struct FunctionSpec {
    std::string name = "zero";
    json params = json::object();
    std::optional<std::string> modulus_name;  // declared continuity modulus
    json modulus_params = json::object();
    bool modulus_osgood = true;
    bool operator==(const FunctionSpec&) const = default;
};

struct BasisSpec {
    std::string kind = "polynomial";  // polynomial | piecewise-linear
    int degree = 3;
    int cells = 8;
    bool auto_box = true;
    Vec box_lo, box_hi;
    bool operator==(const BasisSpec&) const = default;
};

struct NumericsSpec {
    int n_steps = 50;
    std::size_t n_paths = 10000;
    int k = 8;
    std::vector<int> ladder;
    std::size_t ladder_paths = 0;  // 0: use n_paths
    int ladder_steps = 0;          // 0: use n_steps
    int ladder_replicates = 3;
    BasisSpec basis;
    std::uint64_t seed = 1;
    double quad_rel_tol = 1e-8;
    double residual_rms_threshold = 0.05;
    bool time_interpolation = false;
    bool operator==(const NumericsSpec&) const = default;
};

struct OutputSpec {
    std::string dir = "out";
    std::vector<std::string> formats = {"csv"};
    bool operator==(const OutputSpec&) const = default;
};

struct ScenarioConfig {
    std::string name = "scenario";
    Dims dims;
    MeasureSpec measure;
    FunctionSpec b, sigma, beta;
    std::vector<FunctionSpec> gamma, g, h;  // one entry per equation
    double lipschitz_const = 1.0;
    double t0 = 0.0, T = 1.0;
    Vec x0 = {0.0};
    NumericsSpec numerics;
    OutputSpec outputs;
    bool operator==(const ScenarioConfig&) const = default;
};

struct LoadResult {
    std::optional<ScenarioConfig> config;
    std::vector<std::string> errors;  // every problem found, with field paths
    bool ok() const { return errors.empty() && config.has_value(); }
};

LoadResult load_scenario(const std::string& path);
LoadResult scenario_from_json(const json& j);
json scenario_to_json(const ScenarioConfig& cfg);

// builders from validated configs
LevyMeasure build_measure(const MeasureSpec& spec, int dim_e = 1);
ModelCoefficients build_coefficients(const ScenarioConfig& cfg);
RegressionBasis build_basis(const BasisSpec& spec, Dims dims, const PathEnsemble* auto_from);

// solution artifact (self-describing JSON)
void save_solution(const MeshSolution& sol, const std::string& path);
MeshSolution load_solution(const std::string& path);

}  // namespace jbsde
