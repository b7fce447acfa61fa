#pragma once

#include "dynmatch/model.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>

namespace dynmatch {

using json = nlohmann::json;

// Parse a model document. Structural problems (missing keys, unknown labels,
// ragged matrices) throw Error(Config); numerical problems are left for
// validate_model to report.
ModelSpec model_from_json(const json& doc);
json model_to_json(const ModelSpec& spec);

ModelSpec load_model(const std::string& path);
void save_model(const ModelSpec& spec, const std::string& path);

json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// The two-type example market: alpha = gamma = [1 2; 2 4], kernels pulling an
// agent toward its partner's type, beta = .95, unit masses. The firm kernel
// mirrors the worker kernel with roles swapped.
ModelSpec two_type_example(ShockMode mode = ShockMode::None, double scale = 1.0);

// Random dense market: surplus entries ~ U(0, 4) split evenly between the two
// sides, kernel columns ~ normalized U(0,1).
ModelSpec random_spec(int nx, int ny, std::uint64_t seed, double beta = 0.95, double scale = 1.0);

// Allocate an all-zero spec with the given labels.
ModelSpec empty_spec(std::vector<std::string> workers, std::vector<std::string> firms);

}  // namespace dynmatch
