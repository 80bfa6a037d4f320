#include "macnet/gridworld.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <optional>
#include <set>

namespace macnet {

namespace attr {
const std::vector<std::string> shapes = {"cube", "sphere", "cylinder"};
const std::vector<std::string> colors = {"red", "blue", "green", "yellow", "gray", "purple"};
const std::vector<std::string> sizes = {"small", "large"};
const std::vector<std::string> materials = {"rubber", "metal"};
const std::vector<std::string> names = {"size", "color", "material", "shape"};
const std::vector<std::string> directions = {"left", "right", "front", "behind"};

const std::vector<std::string>& values(const std::string& attr_name) {
    if (attr_name == "shape") return shapes;
    if (attr_name == "color") return colors;
    if (attr_name == "size") return sizes;
    if (attr_name == "material") return materials;
    throw SceneError("unknown attribute: " + attr_name);
}
}  // namespace attr

const std::string& SceneObject::get(const std::string& attr_name) const {
    if (attr_name == "shape") return shape;
    if (attr_name == "color") return color;
    if (attr_name == "size") return size;
    if (attr_name == "material") return material;
    throw SceneError("unknown attribute: " + attr_name);
}

void Scene::validate() const {
    if (grid_size < 2) throw SceneError("grid size must be at least 2, got " + std::to_string(grid_size));
    const size_t cells = static_cast<size_t>(grid_size) * static_cast<size_t>(grid_size);
    if (objects.size() < 2 || objects.size() > cells)
        throw SceneError("scene must hold between 2 and " + std::to_string(cells) + " objects, has " +
                         std::to_string(objects.size()));
    std::set<std::pair<int, int>> seen;
    for (const auto& o : objects) {
        if (o.row < 0 || o.row >= grid_size || o.col < 0 || o.col >= grid_size)
            throw SceneError("object at (" + std::to_string(o.row) + "," + std::to_string(o.col) +
                             ") outside the grid");
        if (!seen.emplace(o.row, o.col).second)
            throw SceneError("two objects share cell (" + std::to_string(o.row) + "," +
                             std::to_string(o.col) + ")");
        for (const auto& name : attr::names) {
            const auto& vals = attr::values(name);
            if (std::find(vals.begin(), vals.end(), o.get(name)) == vals.end())
                throw SceneError("attribute " + name + " has value outside vocabulary: " + o.get(name));
        }
    }
}

// --- program typing and execution -------------------------------------------

namespace {

enum class Kind { objset, object, integer, boolean, attrval };

struct OpSig {
    size_t nargs;
    size_t nchildren;
    Kind child_kind;  // required kind of every child (equal/greater/less are homogeneous)
    Kind result;
};

const OpSig* op_signature(const std::string& op) {
    static const std::unordered_map<std::string, OpSig> sigs = {
        {"scene", {0, 0, Kind::objset, Kind::objset}},
        {"filter", {2, 1, Kind::objset, Kind::objset}},
        {"relate", {1, 1, Kind::object, Kind::objset}},
        {"unique", {0, 1, Kind::objset, Kind::object}},
        {"count", {0, 1, Kind::objset, Kind::integer}},
        {"exist", {0, 1, Kind::objset, Kind::boolean}},
        {"query", {1, 1, Kind::object, Kind::attrval}},
        {"equal", {1, 2, Kind::object, Kind::boolean}},
        {"and", {0, 2, Kind::objset, Kind::objset}},
        {"or", {0, 2, Kind::objset, Kind::objset}},
        {"greater", {0, 2, Kind::integer, Kind::boolean}},
        {"less", {0, 2, Kind::integer, Kind::boolean}},
    };
    auto it = sigs.find(op);
    return it == sigs.end() ? nullptr : &it->second;
}

bool is_reasoning_op(const std::string& op) {
    return op == "relate" || op == "and" || op == "or" || op == "count" || op == "exist" ||
           op == "query" || op == "equal" || op == "greater" || op == "less";
}

Kind check_node(const Program& p) {
    const OpSig* sig = op_signature(p.op);
    if (!sig) throw ContractError("unknown program op: " + p.op);
    if (p.args.size() != sig->nargs || p.children.size() != sig->nchildren)
        throw ContractError("op " + p.op + " expects " + std::to_string(sig->nargs) + " args and " +
                            std::to_string(sig->nchildren) + " children");
    if (p.op == "filter") {
        const auto& vals = attr::values(p.args[0]);  // SceneError on unknown attribute
        if (std::find(vals.begin(), vals.end(), p.args[1]) == vals.end())
            throw ContractError("filter value " + p.args[1] + " not in attribute " + p.args[0]);
    } else if (p.op == "relate") {
        if (std::find(attr::directions.begin(), attr::directions.end(), p.args[0]) ==
            attr::directions.end())
            throw ContractError("unknown direction: " + p.args[0]);
    } else if (p.op == "query" || p.op == "equal") {
        attr::values(p.args[0]);
    }
    for (const auto& child : p.children)
        if (check_node(child) != sig->child_kind)
            throw ContractError("op " + p.op + " received a child of the wrong kind");
    return sig->result;
}

struct Value {
    Kind kind = Kind::objset;
    std::vector<int> set;  // sorted object indices
    int obj = -1;
    long num = 0;
    bool truth = false;
    std::string sval;
};

Value eval_node(const Program& p, const Scene& s) {
    const OpSig* sig = op_signature(p.op);
    if (!sig) throw ContractError("unknown program op: " + p.op);
    std::vector<Value> ch;
    ch.reserve(p.children.size());
    for (const auto& c : p.children) ch.push_back(eval_node(c, s));

    Value v;
    v.kind = sig->result;
    if (p.op == "scene") {
        v.set.resize(s.objects.size());
        std::iota(v.set.begin(), v.set.end(), 0);
    } else if (p.op == "filter") {
        for (int i : ch[0].set)
            if (s.objects[static_cast<size_t>(i)].get(p.args[0]) == p.args[1]) v.set.push_back(i);
    } else if (p.op == "relate") {
        const auto& o = s.objects[static_cast<size_t>(ch[0].obj)];
        for (size_t i = 0; i < s.objects.size(); ++i) {
            const auto& t = s.objects[i];
            bool hit = p.args[0] == "left"     ? t.col < o.col
                       : p.args[0] == "right"  ? t.col > o.col
                       : p.args[0] == "front"  ? t.row > o.row
                       : p.args[0] == "behind" ? t.row < o.row
                                               : throw ContractError("unknown direction: " + p.args[0]);
            if (hit) v.set.push_back(static_cast<int>(i));
        }
    } else if (p.op == "unique") {
        if (ch[0].set.size() != 1)
            throw AmbiguityError("unique over a set of size " + std::to_string(ch[0].set.size()));
        v.obj = ch[0].set[0];
    } else if (p.op == "count") {
        v.num = static_cast<long>(ch[0].set.size());
    } else if (p.op == "exist") {
        v.truth = !ch[0].set.empty();
    } else if (p.op == "query") {
        v.sval = s.objects[static_cast<size_t>(ch[0].obj)].get(p.args[0]);
    } else if (p.op == "equal") {
        v.truth = s.objects[static_cast<size_t>(ch[0].obj)].get(p.args[0]) ==
                  s.objects[static_cast<size_t>(ch[1].obj)].get(p.args[0]);
    } else if (p.op == "and") {
        std::set_intersection(ch[0].set.begin(), ch[0].set.end(), ch[1].set.begin(), ch[1].set.end(),
                              std::back_inserter(v.set));
    } else if (p.op == "or") {
        std::set_union(ch[0].set.begin(), ch[0].set.end(), ch[1].set.begin(), ch[1].set.end(),
                       std::back_inserter(v.set));
    } else if (p.op == "greater") {
        v.truth = ch[0].num > ch[1].num;
    } else if (p.op == "less") {
        v.truth = ch[0].num < ch[1].num;
    }
    return v;
}

}  // namespace

int program_depth(const Program& p) {
    int deepest = 0;
    for (const auto& c : p.children) deepest = std::max(deepest, program_depth(c));
    return deepest + (is_reasoning_op(p.op) ? 1 : 0);
}

void validate_program(const Program& p, int max_depth) {
    Kind k = check_node(p);
    if (k == Kind::objset || k == Kind::object)
        throw ContractError("program root op " + p.op + " does not produce an answer");
    int d = program_depth(p);
    if (d > max_depth)
        throw ContractError("program depth " + std::to_string(d) + " exceeds limit " +
                            std::to_string(max_depth));
}

std::string execute_program(const Program& p, const Scene& scene) {
    Value v = eval_node(p, scene);
    switch (v.kind) {
        case Kind::integer: return std::to_string(v.num);
        case Kind::boolean: return v.truth ? "yes" : "no";
        case Kind::attrval: return v.sval;
        default: throw ContractError("program root op " + p.op + " does not produce an answer");
    }
}

const std::vector<std::string>& category_names() {
    static const std::vector<std::string> names = {"count", "exist", "compare_numbers",
                                                   "query_attribute", "compare_attribute"};
    return names;
}

const std::string& category_name(Category c) { return category_names()[static_cast<size_t>(c)]; }

Category category_of_root(const Program& p) {
    if (p.op == "count") return Category::count;
    if (p.op == "exist") return Category::exist;
    if (p.op == "greater" || p.op == "less") return Category::compare_numbers;
    if (p.op == "query") return Category::query_attribute;
    if (p.op == "equal") return Category::compare_attribute;
    throw ContractError("program root op " + p.op + " has no question category");
}

// --- scene sampling -----------------------------------------------------------

namespace {

int rnd_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

const std::string& rnd_of(std::mt19937_64& rng, const std::vector<std::string>& xs) {
    return xs[static_cast<size_t>(rnd_int(rng, 0, static_cast<int>(xs.size()) - 1))];
}

}  // namespace

Scene generate_scene(std::mt19937_64& rng, int n_objects, int grid_size) {
    const int cells = grid_size * grid_size;
    if (grid_size < 2) throw ConfigError("grid size must be at least 2, got " + std::to_string(grid_size));
    if (n_objects < 2 || n_objects > cells)
        throw ConfigError("object count " + std::to_string(n_objects) + " outside [2, " +
                          std::to_string(cells) + "]");
    std::vector<int> slots(static_cast<size_t>(cells));
    std::iota(slots.begin(), slots.end(), 0);
    // partial Fisher-Yates: first n_objects entries become the occupied cells
    for (int i = 0; i < n_objects; ++i) {
        int j = rnd_int(rng, i, cells - 1);
        std::swap(slots[static_cast<size_t>(i)], slots[static_cast<size_t>(j)]);
    }
    Scene s;
    s.grid_size = grid_size;
    s.objects.reserve(static_cast<size_t>(n_objects));
    for (int i = 0; i < n_objects; ++i) {
        SceneObject o;
        o.row = slots[static_cast<size_t>(i)] / grid_size;
        o.col = slots[static_cast<size_t>(i)] % grid_size;
        o.shape = rnd_of(rng, attr::shapes);
        o.color = rnd_of(rng, attr::colors);
        o.size = rnd_of(rng, attr::sizes);
        o.material = rnd_of(rng, attr::materials);
        s.objects.push_back(std::move(o));
    }
    return s;
}

// --- question generation --------------------------------------------------------

namespace {

// (attribute, value) pairs in canonical attribute order.
using FilterSpec = std::vector<std::pair<std::string, std::string>>;

std::vector<int> filter_apply(const Scene& s, const std::vector<int>& in, const FilterSpec& spec) {
    std::vector<int> out;
    for (int i : in) {
        bool ok = true;
        for (const auto& [a, v] : spec)
            if (s.objects[static_cast<size_t>(i)].get(a) != v) { ok = false; break; }
        if (ok) out.push_back(i);
    }
    return out;
}

std::vector<int> relate_apply(const Scene& s, int obj, const std::string& dir) {
    const auto& o = s.objects[static_cast<size_t>(obj)];
    std::vector<int> out;
    for (size_t i = 0; i < s.objects.size(); ++i) {
        const auto& t = s.objects[i];
        bool hit = dir == "left" ? t.col < o.col : dir == "right" ? t.col > o.col
                   : dir == "front" ? t.row > o.row : t.row < o.row;
        if (hit) out.push_back(static_cast<int>(i));
    }
    return out;
}

Program wrap_filters(const FilterSpec& spec, Program inner) {
    Program p = std::move(inner);
    for (const auto& [a, v] : spec) p = Program{"filter", {a, v}, {std::move(p)}};
    return p;
}

struct Ref {
    FilterSpec spec;
    int obj = -1;
};

// Samples a filter spec that picks out exactly one member of `within`.
// An empty spec is allowed when `within` is already a singleton. `forbidden`
// names an attribute that must stay out of the description.
std::optional<Ref> sample_unique_ref(const Scene& s, const std::vector<int>& within,
                                     std::mt19937_64& rng, const std::string& forbidden,
                                     int tries) {
    if (within.empty()) return std::nullopt;
    std::vector<std::string> allowed;
    for (const auto& a : attr::names)
        if (a != forbidden) allowed.push_back(a);
    for (int t = 0; t < tries; ++t) {
        int target = within[static_cast<size_t>(rnd_int(rng, 0, static_cast<int>(within.size()) - 1))];
        const auto& obj = s.objects[static_cast<size_t>(target)];
        int k0 = within.size() == 1 ? 0 : 1;
        for (int k = k0; k <= static_cast<int>(allowed.size()); ++k) {
            std::vector<std::string> pool = allowed;
            for (int i = 0; i < k; ++i) {  // partial shuffle: first k entries are the choice
                int j = rnd_int(rng, i, static_cast<int>(pool.size()) - 1);
                std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            }
            FilterSpec spec;
            for (const auto& a : attr::names)
                if (std::find(pool.begin(), pool.begin() + k, a) != pool.begin() + k)
                    spec.emplace_back(a, obj.get(a));
            auto matched = filter_apply(s, within, spec);
            if (matched.size() == 1 && matched[0] == target) return Ref{std::move(spec), target};
        }
    }
    return std::nullopt;
}

// Samples a spec for counting/existence: usually copied from a live object so
// the set is nonempty, sometimes fully random so zero/empty cases appear.
FilterSpec sample_loose_spec(const Scene& s, std::mt19937_64& rng, int max_attrs) {
    int k = rnd_int(rng, 1, max_attrs);
    std::vector<std::string> pool = attr::names;
    for (int i = 0; i < k; ++i) {
        int j = rnd_int(rng, i, static_cast<int>(pool.size()) - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    const bool from_object = rnd_int(rng, 0, 9) < 7 && !s.objects.empty();
    const SceneObject* src =
        from_object ? &s.objects[static_cast<size_t>(rnd_int(rng, 0, static_cast<int>(s.objects.size()) - 1))]
                    : nullptr;
    FilterSpec spec;
    for (const auto& a : attr::names)
        if (std::find(pool.begin(), pool.begin() + k, a) != pool.begin() + k)
            spec.emplace_back(a, src ? src->get(a) : rnd_of(rng, attr::values(a)));
    return spec;
}

std::string pluralize(const std::string& noun) { return noun + "s"; }

// Rendering: [size] [color] [material] [shape-noun | object/thing].
std::vector<std::string> desc_tokens(const FilterSpec& spec, bool plural, bool paraphrase,
                                     std::mt19937_64& rng) {
    std::vector<std::string> out;
    std::string noun;
    for (const auto& [a, v] : spec) {
        if (a == "shape") noun = v;
        else out.push_back(v);
    }
    if (noun.empty()) noun = paraphrase && rnd_int(rng, 0, 1) ? "thing" : "object";
    out.push_back(plural ? pluralize(noun) : noun);
    return out;
}

std::vector<std::string> dir_tokens(const std::string& dir) {
    if (dir == "left") return {"left", "of"};
    if (dir == "right") return {"right", "of"};
    if (dir == "front") return {"in", "front", "of"};
    return {"behind"};
}

void append(std::vector<std::string>& to, const std::vector<std::string>& extra) {
    to.insert(to.end(), extra.begin(), extra.end());
}

struct Candidate {
    Program prog;
    std::vector<std::string> tokens;
};

// Single-attribute phrase for union/intersection counting: shapes become
// plural nouns, other attributes read as bare adjectives.
std::vector<std::string> adj_tokens(const std::pair<std::string, std::string>& f) {
    if (f.first == "shape") return {pluralize(f.second)};
    return {f.second};
}

std::optional<Candidate> try_query(const Scene& s, std::mt19937_64& rng, const GenOptions& opt) {
    const std::string qattr = attr::names[static_cast<size_t>(rnd_int(rng, 0, 3))];
    const int max_hops = std::min(2, opt.max_depth - 1);
    // 0/1/2-hop mix 5:3:2 — direct lookups dominate, chains stay represented.
    const int roll = rnd_int(rng, 0, 9);
    const int hops = std::min(std::max(0, max_hops), roll < 5 ? 0 : roll < 8 ? 1 : 2);
    std::vector<int> all(s.objects.size());
    std::iota(all.begin(), all.end(), 0);

    auto base = sample_unique_ref(s, all, rng, hops == 0 ? qattr : std::string(), 8);
    if (!base) return std::nullopt;
    Program prog = Program{"unique", {}, {wrap_filters(base->spec, Program{"scene", {}, {}})}};
    int cur = base->obj;
    std::vector<std::pair<std::string, FilterSpec>> hops_out;  // (direction, target spec)
    for (int h = 1; h <= hops; ++h) {
        const std::string& dir = attr::directions[static_cast<size_t>(rnd_int(rng, 0, 3))];
        auto rel = relate_apply(s, cur, dir);
        auto ref = sample_unique_ref(s, rel, rng, h == hops ? qattr : std::string(), 8);
        if (!ref) return std::nullopt;
        prog = Program{"unique", {}, {wrap_filters(ref->spec, Program{"relate", {dir}, {std::move(prog)}})}};
        hops_out.emplace_back(dir, ref->spec);
        cur = ref->obj;
    }
    Program root{"query", {qattr}, {std::move(prog)}};

    std::vector<std::string> tok = {"what", qattr, "is", "the"};
    for (auto it = hops_out.rbegin(); it != hops_out.rend(); ++it) {
        append(tok, desc_tokens(it->second, false, opt.paraphrase, rng));
        append(tok, dir_tokens(it->first));
        tok.push_back("the");
    }
    append(tok, desc_tokens(base->spec, false, opt.paraphrase, rng));
    return Candidate{std::move(root), std::move(tok)};
}

std::optional<Candidate> try_count(const Scene& s, std::mt19937_64& rng, const GenOptions& opt) {
    const int variant = rnd_int(rng, 0, 3);
    if (variant == 0) {  // plain
        FilterSpec spec = sample_loose_spec(s, rng, 2);
        Program root{"count", {}, {wrap_filters(spec, Program{"scene", {}, {}})}};
        std::vector<std::string> tok = {"how", "many"};
        append(tok, desc_tokens(spec, true, opt.paraphrase, rng));
        append(tok, {"are", "there"});
        return Candidate{std::move(root), std::move(tok)};
    }
    if (variant == 1 || variant == 2) {  // union / intersection over single attributes
        FilterSpec a = sample_loose_spec(s, rng, 1);
        FilterSpec b = sample_loose_spec(s, rng, 1);
        if (a == b) return std::nullopt;
        const bool is_and = variant == 2;
        if (is_and && a[0].first == b[0].first) return std::nullopt;  // same-attribute ∩ is degenerate
        Program root{"count",
                     {},
                     {Program{is_and ? "and" : "or",
                              {},
                              {wrap_filters(a, Program{"scene", {}, {}}),
                               wrap_filters(b, Program{"scene", {}, {}})}}}};
        std::vector<std::string> tok = {"how", "many", "objects", "are"};
        if (is_and) tok.push_back("both");
        append(tok, adj_tokens(a[0]));
        tok.push_back(is_and ? "and" : "or");
        append(tok, adj_tokens(b[0]));
        return Candidate{std::move(root), std::move(tok)};
    }
    // relational: count objects in some direction of a unique reference
    std::vector<int> all(s.objects.size());
    std::iota(all.begin(), all.end(), 0);
    auto base = sample_unique_ref(s, all, rng, std::string(), 8);
    if (!base) return std::nullopt;
    const std::string& dir = attr::directions[static_cast<size_t>(rnd_int(rng, 0, 3))];
    FilterSpec mid;
    if (rnd_int(rng, 0, 1)) mid = sample_loose_spec(s, rng, 1);
    Program root{
        "count",
        {},
        {wrap_filters(mid, Program{"relate",
                                   {dir},
                                   {Program{"unique", {}, {wrap_filters(base->spec, Program{"scene", {}, {}})}}}})}};
    std::vector<std::string> tok = {"how", "many"};
    append(tok, desc_tokens(mid, true, opt.paraphrase, rng));
    tok.push_back("are");
    append(tok, dir_tokens(dir));
    tok.push_back("the");
    append(tok, desc_tokens(base->spec, false, opt.paraphrase, rng));
    return Candidate{std::move(root), std::move(tok)};
}

std::optional<Candidate> try_exist(const Scene& s, std::mt19937_64& rng, const GenOptions& opt) {
    const bool relational = rnd_int(rng, 0, 1) == 1;
    if (!relational) {
        FilterSpec spec = sample_loose_spec(s, rng, 2);
        Program root{"exist", {}, {wrap_filters(spec, Program{"scene", {}, {}})}};
        std::vector<std::string> tok = {"are", "there", "any"};
        append(tok, desc_tokens(spec, true, opt.paraphrase, rng));
        return Candidate{std::move(root), std::move(tok)};
    }
    std::vector<int> all(s.objects.size());
    std::iota(all.begin(), all.end(), 0);
    auto base = sample_unique_ref(s, all, rng, std::string(), 8);
    if (!base) return std::nullopt;
    const std::string& dir = attr::directions[static_cast<size_t>(rnd_int(rng, 0, 3))];
    FilterSpec mid;
    if (rnd_int(rng, 0, 2)) {  // 2/3 of relational existence questions constrain the target
        auto rel = relate_apply(s, base->obj, dir);
        if (!rel.empty() && rnd_int(rng, 0, 1)) {
            const auto& src = s.objects[static_cast<size_t>(rel[static_cast<size_t>(
                rnd_int(rng, 0, static_cast<int>(rel.size()) - 1))])];
            const std::string& a = attr::names[static_cast<size_t>(rnd_int(rng, 0, 3))];
            mid.emplace_back(a, src.get(a));
        } else {
            mid = sample_loose_spec(s, rng, 1);
        }
    }
    Program root{
        "exist",
        {},
        {wrap_filters(mid, Program{"relate",
                                   {dir},
                                   {Program{"unique", {}, {wrap_filters(base->spec, Program{"scene", {}, {}})}}}})}};
    std::vector<std::string> tok = {"are", "there", "any"};
    append(tok, desc_tokens(mid, true, opt.paraphrase, rng));
    append(tok, dir_tokens(dir));
    tok.push_back("the");
    append(tok, desc_tokens(base->spec, false, opt.paraphrase, rng));
    return Candidate{std::move(root), std::move(tok)};
}

std::optional<Candidate> try_compare_numbers(const Scene& s, std::mt19937_64& rng,
                                             const GenOptions& opt) {
    FilterSpec a = sample_loose_spec(s, rng, 2);
    FilterSpec b = sample_loose_spec(s, rng, 2);
    if (a == b) return std::nullopt;
    const bool more = rnd_int(rng, 0, 1) == 1;
    Program root{more ? "greater" : "less",
                 {},
                 {Program{"count", {}, {wrap_filters(a, Program{"scene", {}, {}})}},
                  Program{"count", {}, {wrap_filters(b, Program{"scene", {}, {}})}}}};
    std::vector<std::string> tok = {"are", "there", more ? "more" : "fewer"};
    append(tok, desc_tokens(a, true, opt.paraphrase, rng));
    tok.push_back("than");
    append(tok, desc_tokens(b, true, opt.paraphrase, rng));
    return Candidate{std::move(root), std::move(tok)};
}

std::optional<Candidate> try_compare_attribute(const Scene& s, std::mt19937_64& rng,
                                               const GenOptions& opt) {
    const std::string qattr = attr::names[static_cast<size_t>(rnd_int(rng, 0, 3))];
    std::vector<int> all(s.objects.size());
    std::iota(all.begin(), all.end(), 0);
    auto ra = sample_unique_ref(s, all, rng, qattr, 8);
    if (!ra) return std::nullopt;
    std::optional<Ref> rb;
    for (int t = 0; t < 8 && !rb; ++t) {
        auto c = sample_unique_ref(s, all, rng, qattr, 4);
        if (c && c->obj != ra->obj && c->spec != ra->spec) rb = c;
    }
    if (!rb) return std::nullopt;
    Program root{"equal",
                 {qattr},
                 {Program{"unique", {}, {wrap_filters(ra->spec, Program{"scene", {}, {}})}},
                  Program{"unique", {}, {wrap_filters(rb->spec, Program{"scene", {}, {}})}}}};
    std::vector<std::string> tok = {"does", "the"};
    append(tok, desc_tokens(ra->spec, false, opt.paraphrase, rng));
    append(tok, {"have", "the", "same", qattr, "as", "the"});
    append(tok, desc_tokens(rb->spec, false, opt.paraphrase, rng));
    return Candidate{std::move(root), std::move(tok)};
}

}  // namespace

QAInstance generate_question(const Scene& scene, std::mt19937_64& rng, Category family,
                             const GenOptions& opt) {
    scene.validate();
    if (opt.max_depth < 2)
        throw ConfigError("program depth limit must be at least 2, got " + std::to_string(opt.max_depth));
    for (int attempt = 0; attempt < opt.max_retries; ++attempt) {
        std::optional<Candidate> c;
        switch (family) {
            case Category::count: c = try_count(scene, rng, opt); break;
            case Category::exist: c = try_exist(scene, rng, opt); break;
            case Category::compare_numbers: c = try_compare_numbers(scene, rng, opt); break;
            case Category::query_attribute: c = try_query(scene, rng, opt); break;
            case Category::compare_attribute: c = try_compare_attribute(scene, rng, opt); break;
        }
        if (!c) continue;
        try {
            validate_program(c->prog, opt.max_depth);
            std::string answer = execute_program(c->prog, scene);
            QAInstance inst;
            inst.scene = scene;
            inst.tokens = std::move(c->tokens);
            inst.program = std::move(c->prog);
            inst.answer = std::move(answer);
            inst.category = category_name(family);
            return inst;
        } catch (const AmbiguityError&) {
            continue;  // reference construction raced with sampling; try again
        }
    }
    throw GenerationError("no valid " + category_name(family) + " question for this scene after " +
                          std::to_string(opt.max_retries) + " attempts");
}

std::vector<QAInstance> generate_dataset(uint64_t seed, size_t n, const DatasetOptions& opt) {
    const int cells = opt.grid_size * opt.grid_size;
    if (opt.grid_size < 2) throw ConfigError("grid size must be at least 2");
    if (opt.min_objects < 2 || opt.min_objects > opt.max_objects || opt.max_objects > cells)
        throw ConfigError("object count range [" + std::to_string(opt.min_objects) + "," +
                          std::to_string(opt.max_objects) + "] invalid for a " +
                          std::to_string(opt.grid_size) + "x" + std::to_string(opt.grid_size) + " grid");
    std::vector<double> mix = opt.category_mix;
    // Query-weighted default, echoing the family frequencies of compositional
    // VQA corpora: attribute queries dominate, comparisons are the tail.
    if (mix.empty()) mix = {0.25, 0.15, 0.10, 0.40, 0.10};
    if (mix.size() != kNumCategories) throw ConfigError("category mix must list 5 weights");
    double total = 0.0;
    for (double w : mix) {
        if (w < 0.0) throw ConfigError("category mix weights must be nonnegative");
        total += w;
    }
    if (total <= 0.0) throw ConfigError("category mix weights sum to zero");

    // Deterministic proportional schedule: category with the largest deficit next.
    std::vector<double> assigned(kNumCategories, 0.0);
    std::vector<Category> schedule(n);
    for (size_t i = 0; i < n; ++i) {
        size_t best = 0;
        double best_deficit = -1e300;
        for (size_t c = 0; c < kNumCategories; ++c) {
            if (mix[c] <= 0.0) continue;
            double deficit = mix[c] / total * static_cast<double>(i + 1) - assigned[c];
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = c;
            }
        }
        schedule[i] = static_cast<Category>(best);
        assigned[best] += 1.0;
    }

    std::vector<QAInstance> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix_seed(seed, i));
        const int scene_tries = 16;
        for (int t = 0; t < scene_tries; ++t) {
            int n_obj = rnd_int(rng, opt.min_objects, opt.max_objects);
            Scene s = generate_scene(rng, n_obj, opt.grid_size);
            try {
                out.push_back(generate_question(s, rng, schedule[i], opt.gen));
                break;
            } catch (const GenerationError&) {
                if (t + 1 == scene_tries)
                    throw GenerationError("instance " + std::to_string(i) + ": no valid scene after " +
                                          std::to_string(scene_tries) + " resamples");
            }
        }
    }
    return out;
}

std::vector<std::string> question_lexicon() {
    std::vector<std::string> words = {
        // template words
        "how", "many", "are", "there", "any", "is", "the", "what", "does", "have", "same", "as",
        "than", "more", "fewer", "or", "and", "both", "left", "right", "of", "in", "front",
        "behind", "object", "objects", "thing", "things",
        // attribute names
        "size", "color", "material", "shape",
    };
    for (const auto& group : {attr::shapes, attr::colors, attr::sizes, attr::materials})
        for (const auto& w : group) words.push_back(w);
    for (const auto& sh : attr::shapes) words.push_back(pluralize(sh));
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    return words;
}

std::vector<std::string> answer_vocabulary(int grid_size) {
    std::vector<std::string> out;
    for (const auto& group : {attr::colors, attr::shapes, attr::sizes, attr::materials})
        for (const auto& w : group) out.push_back(w);
    out.push_back("yes");
    out.push_back("no");
    for (int i = 0; i <= grid_size * grid_size; ++i) out.push_back(std::to_string(i));
    return out;
}

uint64_t mix_seed(uint64_t seed, uint64_t index) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// --- serialization ---------------------------------------------------------------

nlohmann::json scene_to_json(const Scene& s) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects)
        objs.push_back({o.row, o.col, o.shape, o.color, o.size, o.material});
    return {{"grid", s.grid_size}, {"objects", objs}};
}

Scene scene_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("grid") || !j.contains("objects"))
        throw ContractError("scene json must carry 'grid' and 'objects'");
    Scene s;
    s.grid_size = j.at("grid").get<int>();
    for (const auto& e : j.at("objects")) {
        if (!e.is_array() || e.size() != 6) throw ContractError("scene object must be a 6-entry array");
        SceneObject o;
        o.row = e[0].get<int>();
        o.col = e[1].get<int>();
        o.shape = e[2].get<std::string>();
        o.color = e[3].get<std::string>();
        o.size = e[4].get<std::string>();
        o.material = e[5].get<std::string>();
        s.objects.push_back(std::move(o));
    }
    s.validate();
    return s;
}

nlohmann::json program_to_json(const Program& p) {
    nlohmann::json arr = nlohmann::json::array();
    arr.push_back(p.op);
    for (const auto& a : p.args) arr.push_back(a);
    for (const auto& c : p.children) arr.push_back(program_to_json(c));
    return arr;
}

Program program_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty() || !j[0].is_string())
        throw ContractError("program node must be a nonempty array led by its op name");
    Program p;
    p.op = j[0].get<std::string>();
    const OpSig* sig = op_signature(p.op);
    if (!sig) throw ContractError("unknown program op: " + p.op);
    if (j.size() != 1 + sig->nargs + sig->nchildren)
        throw ContractError("op " + p.op + " expects " + std::to_string(sig->nargs) + " args and " +
                            std::to_string(sig->nchildren) + " children");
    for (size_t i = 0; i < sig->nargs; ++i) {
        if (!j[1 + i].is_string()) throw ContractError("op " + p.op + ": argument must be a string");
        p.args.push_back(j[1 + i].get<std::string>());
    }
    for (size_t i = 0; i < sig->nchildren; ++i)
        p.children.push_back(program_from_json(j[1 + sig->nargs + i]));
    return p;
}

}  // namespace macnet
