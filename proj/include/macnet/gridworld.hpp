#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "macnet/errors.hpp"

namespace macnet {

// Attribute vocabulary of the grid world. Canonical attribute order (size,
// color, material, shape) fixes filter nesting and rendering.
namespace attr {
extern const std::vector<std::string> shapes;
extern const std::vector<std::string> colors;
extern const std::vector<std::string> sizes;
extern const std::vector<std::string> materials;
extern const std::vector<std::string> names;       // {"size","color","material","shape"}
extern const std::vector<std::string> directions;  // {"left","right","front","behind"}
const std::vector<std::string>& values(const std::string& attr_name);  // SceneError on unknown
}  // namespace attr

struct SceneObject {
    int row = 0;
    int col = 0;
    std::string shape, color, size, material;

    const std::string& get(const std::string& attr_name) const;  // SceneError on unknown
};

struct Scene {
    int grid_size = 5;
    std::vector<SceneObject> objects;

    void validate() const;  // SceneError on collisions, bounds, attribute vocabulary
};

// Typed functional-program tree. Children count and argument meaning per op:
//   scene()                         -> object set
//   filter(attr, value)[set]        -> object set
//   relate(direction)[object]       -> object set
//   unique()[set]                   -> object
//   count()[set]                    -> integer
//   exist()[set]                    -> boolean
//   query(attr)[object]             -> attribute value
//   equal(attr)[object, object]     -> boolean
//   and()[set, set]                 -> intersection
//   or()[set, set]                  -> union
//   greater()[int, int] / less()    -> boolean
struct Program {
    std::string op;
    std::vector<std::string> args;
    std::vector<Program> children;
};

// Reasoning depth: longest root-to-leaf count of reasoning ops (relate, and,
// or, count, exist, query, equal, greater, less). Referring-expression
// plumbing (scene, filter, unique) adds no depth.
int program_depth(const Program& p);

// Type-checks the tree (ContractError on malformed ops/args/arity, answer-less
// root, or depth beyond max_depth).
void validate_program(const Program& p, int max_depth = 5);

// Bottom-up evaluation; returns the canonical answer string (attribute value,
// "yes"/"no", or a decimal count). AmbiguityError when a `unique` input has
// size != 1.
std::string execute_program(const Program& p, const Scene& scene);

enum class Category { count, exist, compare_numbers, query_attribute, compare_attribute };
inline constexpr size_t kNumCategories = 5;
const std::vector<std::string>& category_names();
const std::string& category_name(Category c);
Category category_of_root(const Program& p);

struct QAInstance {
    Scene scene;
    std::vector<std::string> tokens;
    Program program;
    std::string answer;    // canonical string; vocab ids assigned at batch time
    std::string category;
};

struct GenOptions {
    int max_depth = 5;
    int max_retries = 64;
    bool paraphrase = false;  // when on, synonym choices (object/thing) are sampled
};

// Uniform collision-free placement, uniform attributes. ConfigError when
// n_objects falls outside [2, grid_size^2].
Scene generate_scene(std::mt19937_64& rng, int n_objects, int grid_size = 5);

// Samples a type-correct program of the requested category (relational chains
// up to 2 hops, union/intersection counting), rejects ambiguous references,
// renders deterministic template tokens, and executes for the gold answer.
// GenerationError after max_retries failed attempts.
QAInstance generate_question(const Scene& scene, std::mt19937_64& rng, Category family,
                             const GenOptions& opt = {});

struct DatasetOptions {
    int grid_size = 5;
    int min_objects = 4;
    int max_objects = 10;
    GenOptions gen;
    // Empty = query-weighted default {0.25, 0.15, 0.10, 0.40, 0.10} in enum
    // order (count, exist, compare_numbers, query_attribute, compare_attribute);
    // else 5 nonnegative weights.
    std::vector<double> category_mix;
};

// Deterministic given (seed, n, options): instance i derives its own RNG
// stream from mix_seed(seed, i) and resamples its scene on generation failure.
std::vector<QAInstance> generate_dataset(uint64_t seed, size_t n, const DatasetOptions& opt = {});

// Closed word list covering every template and attribute word (paraphrase
// synonyms included), independent of any particular dataset.
std::vector<std::string> question_lexicon();

// Closed answer set: colors, shapes, sizes, materials, yes/no, counts
// 0..grid_size^2, in canonical order.
std::vector<std::string> answer_vocabulary(int grid_size);

// SplitMix-style hash giving each (seed, index) an independent RNG stream.
uint64_t mix_seed(uint64_t seed, uint64_t index);

// Serialization: scenes as compact object arrays, programs as nested arrays
// ["op", args..., children...]. Deserializers throw ContractError on
// malformed structure (wrapped into ParseError with line numbers upstream).
nlohmann::json scene_to_json(const Scene& s);
Scene scene_from_json(const nlohmann::json& j);
nlohmann::json program_to_json(const Program& p);
Program program_from_json(const nlohmann::json& j);

}  // namespace macnet
