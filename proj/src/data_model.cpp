#include "pennma/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace pennma {

namespace {

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    std::string out = s.substr(first, last - first + 1);
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') {
        out = out.substr(1, out.size() - 2);
    }
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

bool parse_double(const std::string& s, double& out)
{
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

}  // namespace

std::string to_string(CovariateKind kind)
{
    switch (kind) {
        case CovariateKind::binary: return "binary";
        case CovariateKind::categorical: return "categorical";
        case CovariateKind::continuous: return "continuous";
    }
    return "binary";
}

CovariateKind covariate_kind_from_string(const std::string& s)
{
    if (s == "binary") return CovariateKind::binary;
    if (s == "categorical") return CovariateKind::categorical;
    if (s == "continuous") return CovariateKind::continuous;
    throw ConfigError("unknown covariate kind '" + s + "' (expected binary|categorical|continuous)");
}

const CovariateSpec* CovariateSchema::find(const std::string& name) const
{
    for (const auto& c : covariates) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

CovariateSchema parse_schema(const std::string& json_text)
{
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("schema: invalid JSON: ") + e.what());
    }
    CovariateSchema schema;
    if (j.contains("reference_treatment") && !j["reference_treatment"].is_null()) {
        schema.reference_treatment = j["reference_treatment"].get<std::string>();
    }
    if (j.contains("covariates")) {
        for (const auto& [name, spec] : j["covariates"].items()) {
            CovariateSpec c;
            c.name = name;
            c.kind = covariate_kind_from_string(spec.value("kind", std::string("binary")));
            c.reference = spec.value("reference", std::string());
            if (spec.contains("levels")) c.levels = spec["levels"].get<std::vector<std::string>>();
            if (c.kind == CovariateKind::categorical && c.reference.empty()) {
                throw ConfigError("schema: categorical covariate '" + name + "' needs a reference level");
            }
            schema.covariates.push_back(std::move(c));
        }
    }
    return schema;
}

std::string schema_to_json(const CovariateSchema& schema)
{
    nlohmann::ordered_json j;
    if (schema.reference_treatment) j["reference_treatment"] = *schema.reference_treatment;
    j["covariates"] = nlohmann::ordered_json::object();
    for (const auto& c : schema.covariates) {
        nlohmann::ordered_json spec;
        spec["kind"] = to_string(c.kind);
        if (c.kind == CovariateKind::categorical) {
            spec["reference"] = c.reference;
            if (!c.levels.empty()) spec["levels"] = c.levels;
        }
        j["covariates"][c.name] = spec;
    }
    return j.dump(2) + "\n";
}

CovariateSchema load_schema(const std::string& path) { return parse_schema(read_text_file(path)); }

void save_schema(const CovariateSchema& schema, const std::string& path)
{
    write_text_file(path, schema_to_json(schema));
}

bool Trial::has_arm(const std::string& treatment) const
{
    return std::any_of(arms.begin(), arms.end(), [&](const Arm& a) { return a.treatment == treatment; });
}

int TreatmentNetwork::index_of(const std::string& treatment) const
{
    const auto it = std::find(treatments.begin(), treatments.end(), treatment);
    return it == treatments.end() ? -1 : static_cast<int>(it - treatments.begin());
}

bool TreatmentNetwork::has_edge(int a, int b) const
{
    const std::pair<int, int> e{std::min(a, b), std::max(a, b)};
    return std::binary_search(edges.begin(), edges.end(), e);
}

std::string default_reference(const std::vector<Trial>& trials)
{
    std::map<std::string, std::set<std::string>> neighbours;
    for (const auto& t : trials) {
        for (const auto& a : t.arms) {
            auto& n = neighbours[a.treatment];
            for (const auto& b : t.arms) {
                if (b.treatment != a.treatment) n.insert(b.treatment);
            }
        }
    }
    if (neighbours.empty()) throw ConfigError("no trials: cannot choose a reference treatment");
    std::string best;
    std::size_t best_degree = 0;
    for (const auto& [name, n] : neighbours) {
        if (best.empty() || n.size() > best_degree) {
            best = name;
            best_degree = n.size();
        }
    }
    return best;
}

TreatmentNetwork derive_network(const std::vector<Trial>& trials, const std::string& reference)
{
    if (trials.empty()) throw ConfigError("derive_network: no trials");
    std::set<std::string> names;
    for (const auto& t : trials) {
        for (const auto& a : t.arms) names.insert(a.treatment);
    }
    if (!names.count(reference)) {
        throw ConfigError("reference treatment '" + reference + "' does not appear in the data");
    }

    TreatmentNetwork net;
    net.treatments.push_back(reference);
    for (const auto& n : names) {
        if (n != reference) net.treatments.push_back(n);
    }

    std::set<std::pair<int, int>> edges;
    for (const auto& t : trials) {
        for (std::size_t i = 0; i < t.arms.size(); ++i) {
            for (std::size_t j = i + 1; j < t.arms.size(); ++j) {
                const int a = net.index_of(t.arms[i].treatment);
                const int b = net.index_of(t.arms[j].treatment);
                if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
            }
        }
    }
    net.edges.assign(edges.begin(), edges.end());

    // connectivity
    const int q = static_cast<int>(net.treatments.size());
    std::vector<int> component(q);
    std::iota(component.begin(), component.end(), 0);
    auto root = [&](int x) {
        while (component[x] != x) x = component[x] = component[component[x]];
        return x;
    };
    for (const auto& [a, b] : net.edges) component[root(a)] = root(b);
    for (int i = 1; i < q; ++i) {
        if (root(i) != root(0)) {
            throw ConfigError("treatment network is disconnected: '" + net.treatments[i] +
                              "' is not connected to reference '" + reference +
                              "' (its contrasts are inestimable)");
        }
    }

    for (const auto& [a, b] : net.edges) {
        if (a != 0 && net.has_edge(0, a) && net.has_edge(0, b)) net.reference_loops.push_back({a, b});
    }
    return net;
}

int IpdDataset::trial_index(const std::string& trial_id) const
{
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (trials[i].trial_id == trial_id) return static_cast<int>(i);
    }
    return -1;
}

IpdDataset make_dataset(std::vector<PatientRecord> records, CovariateSchema schema)
{
    IpdDataset ds;
    std::map<std::string, std::size_t> trial_pos;
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (!(rec.followup_time > 0.0)) {
            throw ConfigError("record " + std::to_string(r + 1) + ": follow-up time must be positive");
        }
        if (rec.event != 0 && rec.event != 1) {
            throw ConfigError("record " + std::to_string(r + 1) + ": event must be 0 or 1");
        }
        if (rec.covariates.size() != schema.covariates.size()) {
            throw ConfigError("record " + std::to_string(r + 1) + ": covariate count does not match schema");
        }
        auto [it, inserted] = trial_pos.try_emplace(rec.trial_id, ds.trials.size());
        if (inserted) ds.trials.push_back(Trial{rec.trial_id, {}, {}});
        auto& trial = ds.trials[it->second];
        auto arm = std::find_if(trial.arms.begin(), trial.arms.end(),
                                [&](const Arm& a) { return a.treatment == rec.arm_treatment; });
        if (arm == trial.arms.end()) {
            trial.arms.push_back(Arm{rec.arm_treatment, 1});
        } else {
            ++arm->patients;
        }
    }
    for (const auto& t : ds.trials) {
        if (t.arms.size() < 2) {
            throw ConfigError("trial '" + t.trial_id + "' has only one arm");
        }
    }

    const std::string reference =
        schema.reference_treatment ? *schema.reference_treatment : default_reference(ds.trials);
    ds.network = derive_network(ds.trials, reference);
    for (auto& t : ds.trials) {
        int best = -1;
        for (const auto& a : t.arms) {
            const int idx = ds.network.index_of(a.treatment);
            if (best < 0 || idx < best) best = idx;
        }
        t.reference_arm = ds.network.treatments[best];
    }

    // resolve categorical levels
    for (std::size_t c = 0; c < schema.covariates.size(); ++c) {
        auto& spec = schema.covariates[c];
        if (spec.kind != CovariateKind::categorical) continue;
        if (spec.levels.empty()) {
            std::set<std::string> seen;
            for (const auto& rec : records) seen.insert(rec.covariates[c]);
            seen.insert(spec.reference);
            spec.levels.assign(seen.begin(), seen.end());
        }
        if (std::find(spec.levels.begin(), spec.levels.end(), spec.reference) == spec.levels.end()) {
            throw ConfigError("covariate '" + spec.name + "': reference level '" + spec.reference +
                              "' is not among its levels");
        }
    }
    schema.reference_treatment = reference;
    ds.schema = std::move(schema);
    ds.records = std::move(records);
    return ds;
}

IpdDataset parse_ipd(const std::string& csv_text, const CovariateSchema& schema)
{
    std::istringstream in(csv_text);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ConfigError("IPD CSV: empty file");
    ++line_no;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    // leading '#' lines carry provenance (scenario, seed) and are skipped
    while (!line.empty() && line[0] == '#') {
        if (!std::getline(in, line)) throw ConfigError("IPD CSV: no header line");
        ++line_no;
    }
    const auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "trial" || header[1] != "treatment" || header[2] != "time" ||
        header[3] != "event") {
        throw ConfigError("IPD CSV line " + std::to_string(line_no) + ": header must start with trial,treatment,time,event");
    }

    // schema order is authoritative; map CSV columns onto it
    CovariateSchema resolved = schema;
    std::vector<std::size_t> column_of;
    for (std::size_t h = 4; h < header.size(); ++h) {
        if (!resolved.find(header[h])) {
            resolved.covariates.push_back(CovariateSpec{header[h], CovariateKind::binary, {}, {}});
        }
    }
    for (const auto& c : resolved.covariates) {
        const auto it = std::find(header.begin() + 4, header.end(), c.name);
        if (it == header.end()) throw ConfigError("IPD CSV: schema covariate '" + c.name + "' missing from header");
        column_of.push_back(static_cast<std::size_t>(it - header.begin()));
    }

    std::vector<PatientRecord> records;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        const auto where = "IPD CSV line " + std::to_string(line_no) + ": ";
        if (fields.size() != header.size()) {
            throw ConfigError(where + "expected " + std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
        }
        PatientRecord rec;
        rec.trial_id = fields[0];
        rec.arm_treatment = fields[1];
        if (rec.trial_id.empty() || rec.arm_treatment.empty()) throw ConfigError(where + "empty trial or treatment");
        if (!parse_double(fields[2], rec.followup_time) || !(rec.followup_time > 0.0)) {
            throw ConfigError(where + "time must be a positive decimal, got '" + fields[2] + "'");
        }
        if (fields[3] == "0") {
            rec.event = 0;
        } else if (fields[3] == "1") {
            rec.event = 1;
        } else {
            throw ConfigError(where + "event must be 0 or 1, got '" + fields[3] + "'");
        }
        for (std::size_t c = 0; c < resolved.covariates.size(); ++c) {
            const auto& value = fields[column_of[c]];
            const auto& spec = resolved.covariates[c];
            double x = 0.0;
            if (spec.kind == CovariateKind::binary && value != "0" && value != "1") {
                throw ConfigError(where + "binary covariate '" + spec.name + "' must be 0 or 1");
            }
            if (spec.kind == CovariateKind::continuous && !parse_double(value, x)) {
                throw ConfigError(where + "continuous covariate '" + spec.name + "' is not a number");
            }
            rec.covariates.push_back(value);
        }
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw ConfigError("IPD CSV: no patient rows");
    if (schema.reference_treatment) {
        const bool present = std::any_of(records.begin(), records.end(), [&](const PatientRecord& r) {
            return r.arm_treatment == *schema.reference_treatment;
        });
        if (!present) {
            throw ConfigError("reference treatment '" + *schema.reference_treatment + "' does not appear in the data");
        }
    }
    return make_dataset(std::move(records), std::move(resolved));
}

IpdDataset load_ipd(const std::string& path, const CovariateSchema& schema)
{
    return parse_ipd(read_text_file(path), schema);
}

std::string ipd_to_csv(const IpdDataset& dataset, const std::string& comment)
{
    std::string out;
    if (!comment.empty()) out += "# " + comment + "\n";
    out += "trial,treatment,time,event";
    for (const auto& c : dataset.schema.covariates) out += "," + c.name;
    out += "\n";
    for (const auto& r : dataset.records) {
        out += r.trial_id;
        out += ',';
        out += r.arm_treatment;
        out += ',';
        out += format_double(r.followup_time);
        out += ',';
        out += r.event ? '1' : '0';
        for (const auto& v : r.covariates) {
            out += ',';
            out += v;
        }
        out += '\n';
    }
    return out;
}

void save_ipd(const IpdDataset& dataset, const std::string& path, const std::string& comment)
{
    write_text_file(path, ipd_to_csv(dataset, comment));
}

EncodedCovariates encode_covariates(const IpdDataset& dataset)
{
    EncodedCovariates enc;
    const auto& covs = dataset.schema.covariates;
    struct Column { std::size_t cov; std::string level; };
    std::vector<Column> columns;
    for (std::size_t c = 0; c < covs.size(); ++c) {
        const auto& spec = covs[c];
        if (spec.kind == CovariateKind::categorical) {
            for (const auto& level : spec.levels) {
                if (level == spec.reference) continue;
                columns.push_back({c, level});
                enc.names.push_back(spec.name + "=" + level);
                enc.source.push_back(c);
            }
        } else {
            columns.push_back({c, {}});
            enc.names.push_back(spec.name);
            enc.source.push_back(c);
            if (spec.kind == CovariateKind::continuous) enc.has_continuous = true;
        }
    }

    enc.values.resize(static_cast<Eigen::Index>(dataset.records.size()), static_cast<Eigen::Index>(columns.size()));
    enc.values.setZero();
    for (std::size_t r = 0; r < dataset.records.size(); ++r) {
        const auto& rec = dataset.records[r];
        for (std::size_t c = 0; c < covs.size(); ++c) {
            const auto& spec = covs[c];
            if (spec.kind == CovariateKind::categorical &&
                std::find(spec.levels.begin(), spec.levels.end(), rec.covariates[c]) == spec.levels.end()) {
                throw ConfigError("covariate '" + spec.name + "': unseen level '" + rec.covariates[c] + "' in record " +
                                  std::to_string(r + 1));
            }
        }
        for (std::size_t k = 0; k < columns.size(); ++k) {
            const auto& col = columns[k];
            const auto& spec = covs[col.cov];
            const auto& value = rec.covariates[col.cov];
            double x = 0.0;
            switch (spec.kind) {
                case CovariateKind::categorical: x = value == col.level ? 1.0 : 0.0; break;
                case CovariateKind::binary: x = value == "1" ? 1.0 : 0.0; break;
                case CovariateKind::continuous: parse_double(value, x); break;
            }
            enc.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = x;
        }
    }
    return enc;
}

std::string format_double(double x)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, ptr);
}

std::string read_text_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

}  // namespace pennma
