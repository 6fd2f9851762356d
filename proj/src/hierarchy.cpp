#include "hpipe/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "hpipe/error.hpp"

namespace hpipe {

using nlohmann::json;

const Stage& Hierarchy::stage(StageId id) const {
    // Configs may list stages in any order; the common case is id == index.
    if (id >= 0 && id < size() && stages[static_cast<size_t>(id)].id == id) {
        return stages[static_cast<size_t>(id)];
    }
    for (const auto& s : stages) {
        if (s.id == id) return s;
    }
    throw DomainError("no stage with id " + std::to_string(id));
}

namespace {

// Maps a byte offset from nlohmann's parse_error to line/column for the
// "report line/position on malformed input" contract.
std::pair<int, int> line_col_at(const std::string& text, size_t byte) {
    int line = 1, col = 1;
    const size_t end = std::min(byte, text.size());
    for (size_t i = 0; i < end; ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
        }
    }
}

std::string format_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

Hierarchy Hierarchy::from_json(const json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("hierarchy config must be a JSON object");
    }
    reject_unknown_keys(doc, {"stages", "leaf_probabilities"}, "hierarchy config");
    if (!doc.contains("stages") || !doc["stages"].is_array()) {
        throw ConfigError("hierarchy config requires a \"stages\" array");
    }

    Hierarchy h;
    for (const auto& s : doc["stages"]) {
        if (!s.is_object()) {
            throw ConfigError("each stage must be a JSON object");
        }
        reject_unknown_keys(s, {"id", "latency_s", "transfer_s", "children"}, "stage entry");
        Stage stage;
        if (!s.contains("id") || !s["id"].is_number_integer()) {
            throw ConfigError("stage entry requires integer \"id\"");
        }
        stage.id = s["id"].get<StageId>();
        if (!s.contains("latency_s") || !s["latency_s"].is_number()) {
            throw ConfigError("stage " + std::to_string(stage.id) + " requires numeric \"latency_s\"");
        }
        stage.latency_s = s["latency_s"].get<double>();
        stage.transfer_s = s.value("transfer_s", 0.0);
        if (s.contains("children")) {
            if (!s["children"].is_array()) {
                throw ConfigError("stage " + std::to_string(stage.id) + ": \"children\" must be an array");
            }
            for (const auto& c : s["children"]) {
                if (!c.is_number_integer()) {
                    throw ConfigError("stage " + std::to_string(stage.id) + ": child ids must be integers");
                }
                stage.children.push_back(c.get<StageId>());
            }
        }
        h.stages.push_back(std::move(stage));
    }

    if (doc.contains("leaf_probabilities")) {
        if (!doc["leaf_probabilities"].is_object()) {
            throw ConfigError("\"leaf_probabilities\" must be an object mapping leaf id to probability");
        }
        for (auto it = doc["leaf_probabilities"].begin(); it != doc["leaf_probabilities"].end(); ++it) {
            StageId id = 0;
            try {
                size_t pos = 0;
                id = std::stoi(it.key(), &pos);
                if (pos != it.key().size()) throw std::invalid_argument(it.key());
            } catch (const std::exception&) {
                throw ConfigError("leaf_probabilities key \"" + it.key() + "\" is not a stage id");
            }
            if (!it.value().is_number()) {
                throw ConfigError("leaf_probabilities[" + it.key() + "] must be numeric");
            }
            h.leaf_probabilities[id] = it.value().get<double>();
        }
    }
    return h;
}

Hierarchy Hierarchy::parse(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        auto [line, col] = line_col_at(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ConfigError("malformed hierarchy config at line " + std::to_string(line) +
                          ", column " + std::to_string(col) + ": " + e.what());
    }
    return from_json(doc);
}

Hierarchy Hierarchy::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read hierarchy file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

json Hierarchy::to_json() const {
    json stages_json = json::array();
    for (const auto& s : stages) {
        stages_json.push_back({{"id", s.id},
                               {"latency_s", s.latency_s},
                               {"transfer_s", s.transfer_s},
                               {"children", s.children}});
    }
    json doc{{"stages", stages_json}};
    if (!leaf_probabilities.empty()) {
        json probs = json::object();
        for (const auto& [id, p] : leaf_probabilities) {
            probs[std::to_string(id)] = p;
        }
        doc["leaf_probabilities"] = probs;
    }
    return doc;
}

ValidationReport validate(const Hierarchy& h) {
    ValidationReport report;
    auto add = [&report](const std::string& v) { report.violations.push_back(v); };

    const int n = h.size();
    if (n == 0) {
        add("hierarchy has no stages");
        return report;
    }

    // Dense unique ids 0..n-1.
    std::vector<int> id_count(static_cast<size_t>(n), 0);
    bool ids_dense = true;
    for (const auto& s : h.stages) {
        if (s.id < 0 || s.id >= n) {
            add("stage id " + std::to_string(s.id) + " outside dense range 0.." + std::to_string(n - 1));
            ids_dense = false;
        } else if (++id_count[static_cast<size_t>(s.id)] == 2) {
            add("duplicate stage id " + std::to_string(s.id));
            ids_dense = false;
        }
    }
    for (const auto& s : h.stages) {
        if (s.latency_s <= 0.0) {
            add("stage " + std::to_string(s.id) + " has nonpositive latency " + format_double(s.latency_s));
        }
        if (s.transfer_s < 0.0) {
            add("stage " + std::to_string(s.id) + " has negative transfer time " + format_double(s.transfer_s));
        }
    }
    if (!ids_dense) {
        return report;  // parent/cycle analysis needs dense ids
    }

    // stages may be listed in any order; index by id from here on.
    std::vector<const Stage*> by_id(static_cast<size_t>(n), nullptr);
    for (const auto& s : h.stages) by_id[static_cast<size_t>(s.id)] = &s;

    std::vector<int> parent(static_cast<size_t>(n), -1);
    bool structure_ok = true;
    for (const auto& s : h.stages) {
        for (StageId c : s.children) {
            if (c < 0 || c >= n) {
                add("stage " + std::to_string(s.id) + " references unknown child " + std::to_string(c));
                structure_ok = false;
                continue;
            }
            if (c == s.id) {
                add("stage " + std::to_string(s.id) + " lists itself as a child");
                structure_ok = false;
                continue;
            }
            if (parent[static_cast<size_t>(c)] != -1) {
                add("stage " + std::to_string(c) + " has more than one parent");
                structure_ok = false;
                continue;
            }
            parent[static_cast<size_t>(c)] = s.id;
        }
    }
    if (parent[0] != -1) {
        add("root stage 0 must not have a parent");
        structure_ok = false;
    }
    for (StageId i = 1; i < n; ++i) {
        if (parent[static_cast<size_t>(i)] == -1) {
            add("stage " + std::to_string(i) + " is an orphan (unreachable from the root)");
            structure_ok = false;
        }
    }

    if (structure_ok) {
        // Reachability doubles as the cycle check: with n-1 child slots all
        // filled and no duplicate parents, an unreachable stage implies a cycle.
        std::vector<bool> seen(static_cast<size_t>(n), false);
        std::vector<StageId> stack{0};
        seen[0] = true;
        while (!stack.empty()) {
            StageId cur = stack.back();
            stack.pop_back();
            for (StageId c : by_id[static_cast<size_t>(cur)]->children) {
                if (!seen[static_cast<size_t>(c)]) {
                    seen[static_cast<size_t>(c)] = true;
                    stack.push_back(c);
                }
            }
        }
        for (StageId i = 0; i < n; ++i) {
            if (!seen[static_cast<size_t>(i)]) {
                add("stage " + std::to_string(i) + " is part of a cycle");
                structure_ok = false;
            }
        }
    }

    if (by_id[0] && by_id[0]->transfer_s != 0.0) {
        add("root stage must have transfer time 0");
    }

    if (!structure_ok) {
        return report;
    }

    // Leaf probabilities: keys must be exactly the leaves; values in [0,1]
    // summing to 1 within tolerance. An empty map means uniform.
    std::vector<StageId> leaves;
    for (StageId i = 0; i < n; ++i) {
        if (by_id[static_cast<size_t>(i)]->is_leaf()) leaves.push_back(i);
    }
    if (!h.leaf_probabilities.empty()) {
        for (const auto& [id, p] : h.leaf_probabilities) {
            if (id < 0 || id >= n || !by_id[static_cast<size_t>(id)]->is_leaf()) {
                add("leaf_probabilities entry " + std::to_string(id) + " is not a leaf stage");
            } else if (p < 0.0 || p > 1.0) {
                add("leaf probability for stage " + std::to_string(id) + " outside [0,1]: " + format_double(p));
            }
        }
        for (StageId leaf : leaves) {
            if (!h.leaf_probabilities.count(leaf)) {
                add("leaf stage " + std::to_string(leaf) + " missing from leaf_probabilities");
            }
        }
        double sum = 0.0;
        for (const auto& [id, p] : h.leaf_probabilities) sum += p;
        if (std::abs(sum - 1.0) > kProbabilitySumTolerance) {
            add("leaf probabilities sum to " + format_double(sum));
        }
    }
    return report;
}

void require_valid(const Hierarchy& h) {
    ValidationReport report = validate(h);
    if (report.ok()) return;
    std::string msg = "invalid hierarchy:";
    for (const auto& v : report.violations) {
        msg += "\n  - " + v;
    }
    throw DomainError(msg);
}

std::vector<StageId> parent_map(const Hierarchy& h) {
    std::vector<StageId> parent(static_cast<size_t>(h.size()), -1);
    for (const auto& s : h.stages) {
        for (StageId c : s.children) parent[static_cast<size_t>(c)] = s.id;
    }
    return parent;
}

std::vector<std::pair<StageId, double>> normalized_leaf_probabilities(const Hierarchy& h) {
    std::vector<StageId> leaves;
    for (StageId i = 0; i < h.size(); ++i) {
        if (h.stage(i).is_leaf()) leaves.push_back(i);
    }
    std::vector<std::pair<StageId, double>> out;
    out.reserve(leaves.size());
    if (h.leaf_probabilities.empty()) {
        const double uniform = 1.0 / static_cast<double>(leaves.size());
        for (StageId leaf : leaves) out.emplace_back(leaf, uniform);
        return out;
    }
    double sum = 0.0;
    for (const auto& [id, p] : h.leaf_probabilities) sum += p;
    for (StageId leaf : leaves) {
        out.emplace_back(leaf, h.leaf_probabilities.at(leaf) / sum);
    }
    return out;
}

UsageRates compute_rates(const Hierarchy& h) {
    require_valid(h);
    const int n = h.size();
    UsageRates rates;
    rates.rate.assign(static_cast<size_t>(n), 0.0);
    for (const auto& [leaf, p] : normalized_leaf_probabilities(h)) {
        rates.rate[static_cast<size_t>(leaf)] = p;
    }
    // Children have arbitrary ids, so accumulate bottom-up over a DFS
    // post-order instead of assuming parent < child.
    std::function<double(StageId)> accumulate = [&](StageId id) -> double {
        const Stage& s = h.stage(id);
        if (s.is_leaf()) return rates.rate[static_cast<size_t>(id)];
        double total = 0.0;
        for (StageId c : s.children) total += accumulate(c);
        rates.rate[static_cast<size_t>(id)] = total;
        return total;
    };
    accumulate(0);
    return rates;
}

int depth(const Hierarchy& h) {
    require_valid(h);
    std::function<int(StageId)> walk = [&](StageId id) -> int {
        int deepest = 0;
        for (StageId c : h.stage(id).children) deepest = std::max(deepest, walk(c));
        return deepest + 1;
    };
    return walk(0);
}

std::vector<std::vector<StageId>> root_leaf_paths(const Hierarchy& h) {
    require_valid(h);
    std::vector<std::vector<StageId>> paths;
    std::vector<StageId> current;
    std::function<void(StageId)> walk = [&](StageId id) {
        current.push_back(id);
        const Stage& s = h.stage(id);
        if (s.is_leaf()) {
            paths.push_back(current);
        } else {
            for (StageId c : s.children) walk(c);
        }
        current.pop_back();
    };
    walk(0);
    return paths;
}

}  // namespace hpipe
