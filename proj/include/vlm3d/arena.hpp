#pragma once

#include <map>
#include <string>
#include <vector>

namespace vlm3d {

enum class MatchOutcome { AWins, BWins, Tie };

struct MatchRecord {
  std::string method_a;
  std::string method_b;
  std::string metric;
  MatchOutcome outcome = MatchOutcome::AWins;
};

struct RatingTable {
  // (metric, method) -> rating; the anchor method sits at exactly 1000 in
  // every metric.
  std::map<std::string, std::map<std::string, double>> ratings;
  std::string anchor_method;

  std::vector<std::string> metrics() const;
  std::vector<std::string> methods() const;
};

// Sequential Elo: r_a += k * (s_a - 1 / (1 + 10^((r_b - r_a)/400))), scores
// 1 / 0 / 0.5, processed in record order per metric, then shifted so the
// anchor method reads exactly 1000. declared_methods seeds methods with no
// matches at the initial rating.
RatingTable elo_online(const std::vector<MatchRecord>& records,
                       const std::string& anchor, double k_factor = 32.0,
                       double initial = 1000.0,
                       const std::vector<std::string>& declared_methods = {});

// Order-free maximum likelihood under P(a beats b) =
// 1 / (1 + 10^((r_b - r_a)/400)), ties counted as half-wins, solved by a
// minorize-maximize fixed point iterated to gradient norm < 1e-10 and
// anchored at 1000. Errors on a disconnected comparison graph (listing the
// components) and on methods with no decided mass.
RatingTable bradley_terry_mle(const std::vector<MatchRecord>& records,
                              const std::string& anchor,
                              const std::vector<std::string>& declared_methods =
                                  {});

// JSON-lines I/O: one record per line with keys method_a, method_b, metric,
// outcome ("a-wins" | "b-wins" | "tie"). Parse errors cite the line number.
std::vector<MatchRecord> load_match_records(const std::string& path);
void save_rating_csv(const std::string& path, const RatingTable& table);

}  // namespace vlm3d
