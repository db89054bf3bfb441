#include "riskunc/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "riskunc/error.hpp"
#include "riskunc/rng.hpp"

namespace riskunc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary

std::optional<std::int32_t> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::int32_t Vocabulary::add(std::string_view token) {
  if (auto id = find(token)) return *id;
  const auto id = static_cast<std::int32_t>(tokens_.size());
  tokens_.emplace_back(token);
  counts_.push_back(0);
  index_.emplace(tokens_.back(), id);
  return id;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw IndexError("vocabulary id out of range");
  return tokens_[id];
}

std::uint64_t Vocabulary::count(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= counts_.size()) throw IndexError("vocabulary id out of range");
  return counts_[id];
}

void Vocabulary::set_count(std::int32_t id, std::uint64_t count) {
  if (id < 0 || static_cast<std::size_t>(id) >= counts_.size()) throw IndexError("vocabulary id out of range");
  counts_[id] = count;
}

void Vocabulary::reset_counts() { std::fill(counts_.begin(), counts_.end(), 0); }

std::string Vocabulary::family(std::string_view token) {
  const auto colon = token.find(':');
  return colon == std::string_view::npos ? std::string() : std::string(token.substr(0, colon));
}

void Vocabulary::count_from(const std::vector<PatientRecord>& records) {
  reset_counts();
  for (const auto& r : records) {
    for (const auto& e : r.events) {
      if (e.feature_id < 0 || static_cast<std::size_t>(e.feature_id) >= counts_.size()) {
        throw IndexError("record " + r.patient_id + " references unknown feature id");
      }
      ++counts_[e.feature_id];
    }
  }
}

void Vocabulary::write_tsv(std::ostream& out) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\t' << counts_[i] << '\n';
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary file " + path.string());
  write_tsv(out);
}

Vocabulary Vocabulary::read_tsv(std::istream& in) {
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError(line_no, 1, "expected token<TAB>id<TAB>count");
    const std::string token = line.substr(0, t1);
    std::size_t id = 0;
    std::uint64_t count = 0;
    try {
      std::size_t used = 0;
      id = std::stoul(line.substr(t1 + 1, t2 - t1 - 1), &used);
      count = std::stoull(line.substr(t2 + 1), &used);
    } catch (const std::exception&) {
      throw ParseError(line_no, t1 + 2, "malformed id or count");
    }
    if (id != vocab.size()) throw ParseError(line_no, t1 + 2, "ids must be dense and in order");
    if (vocab.find(token)) throw ParseError(line_no, 1, "duplicate token '" + token + "'");
    vocab.set_count(vocab.add(token), count);
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocabulary file " + path.string());
  return read_tsv(in);
}

// ---------------------------------------------------------------------------
// Record I/O

namespace {

[[noreturn]] void record_error(std::size_t line, const std::string& reason) { throw ParseError(line, 1, reason); }

const json& field(const json& obj, const char* name, std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end()) record_error(line, std::string("missing field '") + name + "'");
  return *it;
}

double number(const json& obj, const char* name, std::size_t line) {
  const auto& v = field(obj, name, line);
  if (!v.is_number()) record_error(line, std::string("field '") + name + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) record_error(line, std::string("field '") + name + "' is not finite");
  return d;
}

std::string text(const json& obj, const char* name, std::size_t line) {
  const auto& v = field(obj, name, line);
  if (!v.is_string()) record_error(line, std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

PatientRecord parse_record(const json& obj, std::size_t line, Vocabulary& vocab, VocabMode mode,
                           std::vector<std::string>& warnings) {
  if (!obj.is_object()) record_error(line, "record must be a JSON object");
  PatientRecord r;
  r.patient_id = text(obj, "patient_id", line);
  if (r.patient_id.empty()) record_error(line, "empty patient_id");
  const auto& ctx = field(obj, "context", line);
  if (!ctx.is_object()) record_error(line, "context must be an object");
  r.context.gender = text(ctx, "gender", line);
  if (r.context.gender != "M" && r.context.gender != "F") record_error(line, "gender must be \"M\" or \"F\"");
  r.context.age_years = number(ctx, "age_years", line);
  if (r.context.age_years < 0.0) record_error(line, "age_years must be non-negative");
  r.context.ethnicity = text(ctx, "ethnicity", line);

  const auto& events = field(obj, "events", line);
  if (!events.is_array()) record_error(line, "events must be an array");
  for (const auto& e : events) {
    if (!e.is_object()) record_error(line, "event must be an object");
    Event ev;
    ev.time_offset_hours = number(e, "t_hours", line);
    if (ev.time_offset_hours < 0.0) record_error(line, "t_hours must be non-negative");
    const std::string token = text(e, "feature", line);
    if (mode == VocabMode::kFrozen) {
      auto id = vocab.find(token);
      if (!id) record_error(line, "unknown feature token '" + token + "'");
      ev.feature_id = *id;
    } else {
      ev.feature_id = vocab.add(token);
      vocab.set_count(ev.feature_id, vocab.count(ev.feature_id) + 1);
    }
    auto value = e.find("value");
    if (value != e.end() && !value->is_null()) {
      if (!value->is_number()) record_error(line, "event value must be a number or null");
      ev.value = value->get<double>();
    }
    r.events.push_back(ev);
  }
  const auto by_time = [](const Event& a, const Event& b) { return a.time_offset_hours < b.time_offset_hours; };
  if (!std::is_sorted(r.events.begin(), r.events.end(), by_time)) {
    std::stable_sort(r.events.begin(), r.events.end(), by_time);
    warnings.push_back("line " + std::to_string(line) + ": events of " + r.patient_id + " were not sorted; sorted");
  }
  const auto& label = field(obj, "label", line);
  if (!label.is_number_integer()) record_error(line, "label must be an integer");
  r.label = label.get<int>();
  if (r.label < 0) record_error(line, "label must be non-negative");
  r.length_of_stay_days = number(obj, "los_days", line);
  return r;
}

}  // namespace

IngestResult ingest(std::istream& in, Vocabulary& vocab, VocabMode mode) {
  IngestResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, e.byte, "malformed JSON");
    }
    result.records.push_back(parse_record(obj, line_no, vocab, mode, result.warnings));
  }
  if (result.records.empty()) result.warnings.emplace_back("no records found; cohort is empty");
  return result;
}

IngestResult ingest(const std::filesystem::path& path, Vocabulary& vocab, VocabMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read record file " + path.string());
  return ingest(in, vocab, mode);
}

void write_record(std::ostream& out, const PatientRecord& record, const Vocabulary& vocab) {
  json events = json::array();
  for (const auto& e : record.events) {
    json ev;
    ev["t_hours"] = e.time_offset_hours;
    ev["feature"] = vocab.token(e.feature_id);
    ev["value"] = e.value ? json(*e.value) : json(nullptr);
    events.push_back(std::move(ev));
  }
  json obj;
  obj["patient_id"] = record.patient_id;
  obj["context"] = {{"gender", record.context.gender},
                    {"age_years", record.context.age_years},
                    {"ethnicity", record.context.ethnicity}};
  obj["events"] = std::move(events);
  obj["label"] = record.label;
  obj["los_days"] = record.length_of_stay_days;
  out << obj.dump() << '\n';
}

void write_records(std::ostream& out, const std::vector<PatientRecord>& records, const Vocabulary& vocab) {
  for (const auto& r : records) write_record(out, r, vocab);
}

void save_records(const std::filesystem::path& path, const std::vector<PatientRecord>& records,
                  const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write record file " + path.string());
  write_records(out, records, vocab);
}

// ---------------------------------------------------------------------------

DayBlocks day_bagging(const PatientRecord& record) {
  if (record.events.empty()) return DayBlocks(1);
  DayBlocks blocks;
  double last = -1.0;
  for (const auto& e : record.events) {
    if (e.time_offset_hours < last) throw Error("day_bagging needs events sorted by time");
    last = e.time_offset_hours;
    const auto day = static_cast<std::size_t>(std::floor(e.time_offset_hours / 24.0));
    if (blocks.size() <= day) blocks.resize(day + 1);
    blocks[day].push_back(e.feature_id);
  }
  return blocks;
}

CohortSplit split(const std::vector<PatientRecord>& records, std::uint64_t seed) {
  if (records.size() < 10) throw ConfigError("split needs at least 10 records");
  // Group by patient so a patient never straddles partitions.
  std::vector<std::string> patients;
  std::unordered_map<std::string, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, inserted] = rows.try_emplace(records[i].patient_id);
    if (inserted) patients.push_back(records[i].patient_id);
    it->second.push_back(i);
  }
  auto rng = make_rng(seed, {0x5u});
  std::shuffle(patients.begin(), patients.end(), rng);

  const std::size_t n = patients.size();
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  const std::size_t n_train = n - n_val - n_test;

  CohortSplit out;
  out.seed = seed;
  for (std::size_t p = 0; p < n; ++p) {
    auto& dst = p < n_train ? out.train : (p < n_train + n_val ? out.validation : out.test);
    for (auto i : rows[patients[p]]) dst.push_back(records[i]);
  }
  return out;
}

std::vector<std::size_t> Partition::members(std::size_t group) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    if (group_of[i] == group) out.push_back(i);
  }
  return out;
}

Partition gender_partition(const std::vector<PatientRecord>& records) {
  Partition p;
  p.names = {"F", "M"};
  p.group_of.reserve(records.size());
  for (const auto& r : records) p.group_of.push_back(r.context.gender == "F" ? 0 : 1);
  return p;
}

Partition age_partition(const std::vector<PatientRecord>& records) {
  Partition p;
  p.names = {"neonate", "adult_q1", "adult_q2", "adult_q3", "adult_q4"};
  p.group_of.assign(records.size(), 0);
  std::vector<std::size_t> adults;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!is_neonate(records[i].context.age_years)) adults.push_back(i);
  }
  std::stable_sort(adults.begin(), adults.end(), [&](std::size_t a, std::size_t b) {
    return records[a].context.age_years < records[b].context.age_years;
  });
  const std::size_t n = adults.size();
  std::size_t quartile = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    const double age = records[adults[rank]].context.age_years;
    const bool tied = rank > 0 && age == records[adults[rank - 1]].context.age_years;
    if (!tied) quartile = 4 * rank / n;
    p.group_of[adults[rank]] = 1 + quartile;
  }
  return p;
}

}  // namespace riskunc
