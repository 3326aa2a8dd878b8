#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace pennma {

/// Invalid user input: bad file contents, inconsistent schema, impossible configuration.
class ConfigError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

enum class CovariateKind { binary, categorical, continuous };

std::string to_string(CovariateKind kind);
CovariateKind covariate_kind_from_string(const std::string& s);

struct CovariateSpec
{
    std::string name;
    CovariateKind kind = CovariateKind::binary;
    std::string reference;               // categorical only
    std::vector<std::string> levels;     // categorical only; resolved at load time if empty
};

struct CovariateSchema
{
    std::optional<std::string> reference_treatment;
    std::vector<CovariateSpec> covariates;

    const CovariateSpec* find(const std::string& name) const;
};

CovariateSchema load_schema(const std::string& path);
CovariateSchema parse_schema(const std::string& json_text);
std::string schema_to_json(const CovariateSchema& schema);
void save_schema(const CovariateSchema& schema, const std::string& path);

struct PatientRecord
{
    std::string trial_id;
    std::string arm_treatment;
    double followup_time = 0.0;
    int event = 0;
    std::vector<std::string> covariates;  // aligned with IpdDataset::schema.covariates
};

struct Arm
{
    std::string treatment;
    std::size_t patients = 0;
};

struct Trial
{
    std::string trial_id;
    std::vector<Arm> arms;
    std::string reference_arm;

    bool has_arm(const std::string& treatment) const;
};

/// Treatments (reference first), direct-comparison edges and the three-cycles
/// closed through the reference treatment.
struct TreatmentNetwork
{
    std::vector<std::string> treatments;
    std::vector<std::pair<int, int>> edges;            // sorted, first < second
    std::vector<std::pair<int, int>> reference_loops;  // sorted, 0 < first < second

    int index_of(const std::string& treatment) const;  // -1 if absent
    const std::string& reference() const { return treatments.front(); }
    bool has_edge(int a, int b) const;
    std::size_t size() const { return treatments.size(); }
};

/// Most-connected treatment; ties go to the lexicographically smallest name.
std::string default_reference(const std::vector<Trial>& trials);

TreatmentNetwork derive_network(const std::vector<Trial>& trials, const std::string& reference);

struct IpdDataset
{
    std::vector<PatientRecord> records;
    std::vector<Trial> trials;
    TreatmentNetwork network;
    CovariateSchema schema;

    int trial_index(const std::string& trial_id) const;  // -1 if absent
};

/// Groups records into trials (first-appearance order), derives the network and
/// assigns each trial's reference arm. Validates every invariant.
IpdDataset make_dataset(std::vector<PatientRecord> records, CovariateSchema schema);

IpdDataset load_ipd(const std::string& path, const CovariateSchema& schema);
IpdDataset parse_ipd(const std::string& csv_text, const CovariateSchema& schema);
/// `comment`, if given, is written as a leading "# ..." line.
std::string ipd_to_csv(const IpdDataset& dataset, const std::string& comment = {});
void save_ipd(const IpdDataset& dataset, const std::string& path, const std::string& comment = {});

struct EncodedCovariates
{
    Eigen::MatrixXd values;               // records x columns
    std::vector<std::string> names;
    std::vector<std::size_t> source;      // index into schema.covariates per column
    bool has_continuous = false;
};

EncodedCovariates encode_covariates(const IpdDataset& dataset);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double x);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace pennma
