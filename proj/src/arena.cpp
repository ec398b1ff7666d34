#include "vlm3d/arena.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vlm3d {

std::vector<std::string> RatingTable::metrics() const {
  std::vector<std::string> out;
  for (const auto& [metric, _] : ratings) out.push_back(metric);
  return out;
}

std::vector<std::string> RatingTable::methods() const {
  std::set<std::string> seen;
  for (const auto& [_, row] : ratings)
    for (const auto& [method, __] : row) seen.insert(method);
  return {seen.begin(), seen.end()};
}

namespace {

// Collects methods per metric, in first-appearance order plus declared ones.
std::map<std::string, std::vector<std::string>> methods_per_metric(
    const std::vector<MatchRecord>& records,
    const std::vector<std::string>& declared) {
  std::map<std::string, std::vector<std::string>> out;
  auto add = [](std::vector<std::string>& v, const std::string& m) {
    if (std::find(v.begin(), v.end(), m) == v.end()) v.push_back(m);
  };
  std::set<std::string> metrics;
  for (const auto& r : records) metrics.insert(r.metric);
  if (metrics.empty() && !declared.empty()) metrics.insert("overall");
  for (const auto& metric : metrics) {
    auto& v = out[metric];
    for (const auto& m : declared) add(v, m);
    for (const auto& r : records)
      if (r.metric == metric) {
        if (r.method_a == r.method_b)
          throw std::invalid_argument("match record pits a method against itself");
        add(v, r.method_a);
        add(v, r.method_b);
      }
  }
  return out;
}

void anchor_table(RatingTable& table, const std::string& anchor) {
  table.anchor_method = anchor;
  for (auto& [metric, row] : table.ratings) {
    auto it = row.find(anchor);
    if (it == row.end())
      throw std::invalid_argument("unknown anchor method: " + anchor);
    const double shift = it->second - 1000.0;
    for (auto& [_, r] : row) r -= shift;
    it->second = 1000.0;
  }
}

double expected_score(double r_self, double r_other) {
  return 1.0 / (1.0 + std::pow(10.0, (r_other - r_self) / 400.0));
}

}  // namespace

RatingTable elo_online(const std::vector<MatchRecord>& records,
                       const std::string& anchor, double k_factor,
                       double initial,
                       const std::vector<std::string>& declared_methods) {
  if (!(k_factor > 0.0))
    throw std::invalid_argument("elo k_factor must be > 0");
  RatingTable table;
  for (const auto& [metric, methods] :
       methods_per_metric(records, declared_methods)) {
    auto& row = table.ratings[metric];
    for (const auto& m : methods) row[m] = initial;
  }
  for (const auto& rec : records) {
    auto& row = table.ratings[rec.metric];
    double& ra = row[rec.method_a];
    double& rb = row[rec.method_b];
    const double ea = expected_score(ra, rb);
    const double eb = 1.0 - ea;
    const double sa = rec.outcome == MatchOutcome::AWins
                          ? 1.0
                          : (rec.outcome == MatchOutcome::Tie ? 0.5 : 0.0);
    const double sb = 1.0 - sa;
    const double new_ra = ra + k_factor * (sa - ea);
    const double new_rb = rb + k_factor * (sb - eb);
    ra = new_ra;
    rb = new_rb;
  }
  anchor_table(table, anchor);
  return table;
}

namespace {

struct PairCounts {
  // wins[i][j]: decided-match mass of i over j (ties contribute 0.5 each way)
  std::vector<std::vector<double>> wins;
};

// Log-likelihood of strengths pi (base-e) for one metric.
double bt_log_likelihood(const PairCounts& counts,
                         const std::vector<double>& pi) {
  const std::size_t n = pi.size();
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || counts.wins[i][j] == 0.0) continue;
      ll += counts.wins[i][j] * std::log(pi[i] / (pi[i] + pi[j]));
    }
  return ll;
}

void check_connected(const PairCounts& counts,
                     const std::vector<std::string>& methods,
                     const std::string& metric) {
  const std::size_t n = methods.size();
  std::vector<int> component(n, -1);
  int num_components = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (component[s] != -1) continue;
    const int id = num_components++;
    std::vector<std::size_t> stack{s};
    component[s] = id;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v = 0; v < n; ++v) {
        if (component[v] != -1) continue;
        if (counts.wins[u][v] > 0.0 || counts.wins[v][u] > 0.0) {
          component[v] = id;
          stack.push_back(v);
        }
      }
    }
  }
  if (num_components <= 1) return;
  std::ostringstream msg;
  msg << "comparison graph for metric '" << metric << "' is disconnected:";
  for (int c = 0; c < num_components; ++c) {
    msg << " {";
    bool first = true;
    for (std::size_t i = 0; i < n; ++i)
      if (component[i] == c) {
        if (!first) msg << ", ";
        msg << methods[i];
        first = false;
      }
    msg << "}";
  }
  throw std::invalid_argument(msg.str());
}

}  // namespace

RatingTable bradley_terry_mle(const std::vector<MatchRecord>& records,
                              const std::string& anchor,
                              const std::vector<std::string>& declared_methods) {
  RatingTable table;
  for (const auto& [metric, methods] :
       methods_per_metric(records, declared_methods)) {
    const std::size_t n = methods.size();
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) index[methods[i]] = i;

    PairCounts counts;
    counts.wins.assign(n, std::vector<double>(n, 0.0));
    bool any_match = false;
    for (const auto& rec : records) {
      if (rec.metric != metric) continue;
      any_match = true;
      const std::size_t a = index[rec.method_a];
      const std::size_t b = index[rec.method_b];
      switch (rec.outcome) {
        case MatchOutcome::AWins:
          counts.wins[a][b] += 1.0;
          break;
        case MatchOutcome::BWins:
          counts.wins[b][a] += 1.0;
          break;
        case MatchOutcome::Tie:
          counts.wins[a][b] += 0.5;
          counts.wins[b][a] += 0.5;
          break;
      }
    }

    auto& row = table.ratings[metric];
    if (!any_match) {
      // Declared methods with no data all sit at the initial rating.
      for (const auto& m : methods) row[m] = 1000.0;
      continue;
    }

    check_connected(counts, methods, metric);
    for (std::size_t i = 0; i < n; ++i) {
      double played = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        played += counts.wins[i][j] + counts.wins[j][i];
      if (played == 0.0)
        throw std::invalid_argument("method '" + methods[i] +
                                    "' has no wins or losses in metric '" +
                                    metric + "'");
    }

    // Minorize-maximize fixed point on strengths; each sweep cannot decrease
    // the likelihood. Damping keeps strengths normalized for stability.
    std::vector<double> pi(n, 1.0);
    std::vector<double> total_wins(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) total_wins[i] += counts.wins[i][j];

    double prev_ll = bt_log_likelihood(counts, pi);
    constexpr int kMaxIters = 10000;
    constexpr double kGradTol = 1e-10;
    for (int iter = 0; iter < kMaxIters; ++iter) {
      // Gradient of the log-likelihood with respect to log-strengths.
      double grad_norm = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double expected = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          const double matches = counts.wins[i][j] + counts.wins[j][i];
          if (matches == 0.0) continue;
          expected += matches * pi[i] / (pi[i] + pi[j]);
        }
        const double g = total_wins[i] - expected;
        grad_norm += g * g;
      }
      grad_norm = std::sqrt(grad_norm);
      if (grad_norm < kGradTol) break;

      std::vector<double> next(n);
      for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          const double matches = counts.wins[i][j] + counts.wins[j][i];
          if (matches == 0.0) continue;
          denom += matches / (pi[i] + pi[j]);
        }
        if (total_wins[i] == 0.0) {
          // Winless methods sink; park them far below and keep iterating.
          next[i] = pi[i] * 1e-6;
        } else {
          next[i] = total_wins[i] / denom;
        }
      }
      // Normalize the geometric mean to 1 so strengths stay bounded.
      double log_mean = 0.0;
      for (double p : next) log_mean += std::log(p);
      log_mean /= static_cast<double>(n);
      for (double& p : next) p = std::exp(std::log(p) - log_mean);
      pi = std::move(next);

      const double ll = bt_log_likelihood(counts, pi);
      if (ll < prev_ll - 1e-9)
        throw std::logic_error("bradley-terry likelihood decreased");
      prev_ll = ll;
    }

    for (std::size_t i = 0; i < n; ++i)
      row[methods[i]] = 1000.0 + 400.0 * std::log10(pi[i]);
  }
  anchor_table(table, anchor);
  return table;
}

std::vector<MatchRecord> load_match_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open records: " + path);
  std::vector<MatchRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("malformed record at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    MatchRecord rec;
    try {
      rec.method_a = j.at("method_a").get<std::string>();
      rec.method_b = j.at("method_b").get<std::string>();
      rec.metric = j.at("metric").get<std::string>();
      const std::string outcome = j.at("outcome").get<std::string>();
      if (outcome == "a-wins")
        rec.outcome = MatchOutcome::AWins;
      else if (outcome == "b-wins")
        rec.outcome = MatchOutcome::BWins;
      else if (outcome == "tie")
        rec.outcome = MatchOutcome::Tie;
      else
        throw std::runtime_error("unknown outcome '" + outcome + "'");
    } catch (const std::exception& e) {
      throw std::runtime_error("malformed record at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    if (rec.method_a == rec.method_b)
      throw std::runtime_error("malformed record at line " +
                               std::to_string(line_no) +
                               ": method_a equals method_b");
    out.push_back(std::move(rec));
  }
  return out;
}

void save_rating_csv(const std::string& path, const RatingTable& table) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "metric,method,rating\n";
  for (const auto& [metric, row] : table.ratings) {
    // Within a metric, strongest first; method name breaks ties.
    std::vector<std::pair<std::string, double>> entries(row.begin(),
                                                        row.end());
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) {
                       if (a.second != b.second) return a.second > b.second;
                       return a.first < b.first;
                     });
    for (const auto& [method, rating] : entries) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6f", rating);
      os << metric << "," << method << "," << buf << "\n";
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace vlm3d
