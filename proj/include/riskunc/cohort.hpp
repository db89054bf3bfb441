#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace riskunc {

struct PatientContext {
  std::string gender;  // "M" or "F"
  double age_years = 0.0;
  std::string ethnicity;

  friend bool operator==(const PatientContext&, const PatientContext&) = default;
};

struct Event {
  double time_offset_hours = 0.0;
  std::int32_t feature_id = 0;
  std::optional<double> value;

  friend bool operator==(const Event&, const Event&) = default;
};

struct PatientRecord {
  std::string patient_id;
  PatientContext context;
  std::vector<Event> events;  // sorted by time_offset_hours
  int label = 0;              // {0,1} for binary tasks, [0,K) for multiclass
  double length_of_stay_days = 0.0;

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

/// Dense token <-> id map with training-set frequency counts.
///
/// Tokens may carry a feature-family prefix ("med:...", "lab:..."); family()
/// returns the part before the first ':' or "" when there is none.
class Vocabulary {
 public:
  std::size_t size() const { return tokens_.size(); }
  std::optional<std::int32_t> find(std::string_view token) const;
  /// Id of `token`, adding it with count zero when absent.
  std::int32_t add(std::string_view token);
  const std::string& token(std::int32_t id) const;
  std::uint64_t count(std::int32_t id) const;
  void set_count(std::int32_t id, std::uint64_t count);
  void reset_counts();
  static std::string family(std::string_view token);

  /// Recomputes counts from event occurrences in `records`.
  void count_from(const std::vector<PatientRecord>& records);

  /// "token \t id \t count" per line, ordered by id.
  void write_tsv(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static Vocabulary read_tsv(std::istream& in);
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.counts_ == b.counts_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct Cohort {
  std::vector<PatientRecord> records;
  Vocabulary vocabulary;
};

// ---------------------------------------------------------------------------
// Synthetic generation

struct SyntheticConfig {
  std::size_t n_patients = 1000;
  std::size_t vocab_size = 300;
  int num_classes = 2;  // 2 = binary mortality-style task
  double positive_rate = 0.20;
  double neonate_rate = 0.10;
  double zipf_exponent = 1.1;
  double mean_extra_days = 3.0;  // number of days is 1 + Poisson(mean_extra_days), capped
  int max_days = 14;
  double events_per_day = 5.0;
  double empty_record_rate = 0.01;
  double label_event_rate = 3.0;  // expected label-conditional events per patient
  double token_signal = 1.0;      // scale of per-token risk loadings
  double noise_scale = 0.6;

  void validate() const;
};

/// Seeded synthetic cohort. Every token of the vocabulary is present (ids are
/// Zipf ranks); counts cover all generated records.
Cohort generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// Probability of the Zipf rank distribution used for base events.
std::vector<double> zipf_probabilities(std::size_t vocab_size, double exponent);

// ---------------------------------------------------------------------------
// File ingestion (one JSON object per line)

enum class VocabMode { kBuild, kFrozen };

struct IngestResult {
  std::vector<PatientRecord> records;
  std::vector<std::string> warnings;
};

/// Parses records, resolving feature tokens through `vocab`. In kBuild mode
/// unknown tokens get new ids and counts are incremented; in kFrozen mode an
/// unknown token is a ParseError. Unsorted events are sorted with a warning.
IngestResult ingest(std::istream& in, Vocabulary& vocab, VocabMode mode);
IngestResult ingest(const std::filesystem::path& path, Vocabulary& vocab, VocabMode mode);

void write_record(std::ostream& out, const PatientRecord& record, const Vocabulary& vocab);
void write_records(std::ostream& out, const std::vector<PatientRecord>& records, const Vocabulary& vocab);
void save_records(const std::filesystem::path& path, const std::vector<PatientRecord>& records,
                  const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Sequencing, splitting, subgroups

/// Feature ids per 24-hour block; block d holds events with
/// floor(t / 24) == d. Empty intermediate days are kept; a record without
/// events yields one empty block.
using DayBlocks = std::vector<std::vector<std::int32_t>>;
DayBlocks day_bagging(const PatientRecord& record);

struct CohortSplit {
  std::vector<PatientRecord> train;
  std::vector<PatientRecord> validation;
  std::vector<PatientRecord> test;
  std::uint64_t seed = 0;
};

/// Patient-level 8:1:1 split after a seeded shuffle. Needs at least 10 records.
CohortSplit split(const std::vector<PatientRecord>& records, std::uint64_t seed);

inline constexpr double kNeonateMaxAgeYears = 1.0 / 12.0;
inline bool is_neonate(double age_years) { return age_years < kNeonateMaxAgeYears; }

/// Assignment of records to named groups.
struct Partition {
  std::vector<std::string> names;
  std::vector<std::size_t> group_of;  // one entry per record

  std::vector<std::size_t> members(std::size_t group) const;
};

Partition gender_partition(const std::vector<PatientRecord>& records);
/// Group 0 is neonates; groups 1..4 are adult age quartiles by sorted rank,
/// ties assigned to the lower quartile.
Partition age_partition(const std::vector<PatientRecord>& records);

}  // namespace riskunc
