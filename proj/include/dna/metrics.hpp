#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace dna {

// Append-only metrics sink. Every event goes to a JSON-lines stream; scalar
// events additionally go to a flat CSV (step,metric,value). Doubles are
// serialized with shortest-round-trip formatting, so identical runs produce
// byte-identical files. Wall-clock time is deliberately never recorded.
class MetricsWriter {
 public:
  MetricsWriter() = default;  // null sink

  MetricsWriter(const std::filesystem::path& jsonl_path, const std::filesystem::path& csv_path) {
    jsonl_.open(jsonl_path, std::ios::out | std::ios::trunc);
    csv_.open(csv_path, std::ios::out | std::ios::trunc);
    if (!jsonl_ || !csv_) throw std::runtime_error("MetricsWriter: cannot open output files");
    csv_ << "step,metric,value\n";
    active_ = true;
  }

  bool active() const { return active_; }

  void event(const nlohmann::json& obj) {
    if (!active_) return;
    jsonl_ << obj.dump() << '\n';
  }

  void scalar(long long step, std::string_view metric, double value) {
    if (!active_) return;
    nlohmann::json obj{{"event", "scalar"}, {"step", step}, {"metric", metric}, {"value", value}};
    jsonl_ << obj.dump() << '\n';
    csv_ << step << ',' << metric << ',' << nlohmann::json(value).dump() << '\n';
  }

  void flush() {
    if (!active_) return;
    jsonl_.flush();
    csv_.flush();
  }

 private:
  bool active_ = false;
  std::ofstream jsonl_;
  std::ofstream csv_;
};

}  // namespace dna
