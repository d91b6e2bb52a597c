#include "stmtl/exact_ot.hpp"

#include <cmath>
#include <limits>

namespace stmtl {

namespace {

struct Edge {
  int to;
  double cap;
  double cost;
  int rev;  // index of the reverse edge in graph[to]
};

class MinCostFlow {
 public:
  explicit MinCostFlow(int n) : graph_(static_cast<size_t>(n)) {}

  void add_edge(int from, int to, double cap, double cost) {
    graph_[static_cast<size_t>(from)].push_back(
        {to, cap, cost, static_cast<int>(graph_[static_cast<size_t>(to)].size())});
    graph_[static_cast<size_t>(to)].push_back(
        {from, 0.0, -cost, static_cast<int>(graph_[static_cast<size_t>(from)].size()) - 1});
  }

  // Successive shortest paths with Bellman-Ford; each augmentation saturates
  // a supply or demand arc, so the loop runs at most n+m times here.
  double run(int s, int t) {
    const double inf = std::numeric_limits<double>::infinity();
    double total = 0.0;
    while (true) {
      const int n = static_cast<int>(graph_.size());
      std::vector<double> dist(static_cast<size_t>(n), inf);
      std::vector<int> prev_node(static_cast<size_t>(n), -1), prev_edge(static_cast<size_t>(n), -1);
      dist[static_cast<size_t>(s)] = 0.0;
      for (int round = 0; round < n; ++round) {
        bool changed = false;
        for (int u = 0; u < n; ++u) {
          if (dist[static_cast<size_t>(u)] == inf) continue;
          for (size_t e = 0; e < graph_[static_cast<size_t>(u)].size(); ++e) {
            const Edge& ed = graph_[static_cast<size_t>(u)][e];
            if (ed.cap <= 1e-15) continue;
            const double nd = dist[static_cast<size_t>(u)] + ed.cost;
            if (nd < dist[static_cast<size_t>(ed.to)] - 1e-15) {
              dist[static_cast<size_t>(ed.to)] = nd;
              prev_node[static_cast<size_t>(ed.to)] = u;
              prev_edge[static_cast<size_t>(ed.to)] = static_cast<int>(e);
              changed = true;
            }
          }
        }
        if (!changed) break;
      }
      if (dist[static_cast<size_t>(t)] == inf) break;
      double push = inf;
      for (int v = t; v != s; v = prev_node[static_cast<size_t>(v)])
        push = std::min(push,
                        graph_[static_cast<size_t>(prev_node[static_cast<size_t>(v)])]
                              [static_cast<size_t>(prev_edge[static_cast<size_t>(v)])].cap);
      if (push <= 1e-15) break;
      for (int v = t; v != s; v = prev_node[static_cast<size_t>(v)]) {
        Edge& ed = graph_[static_cast<size_t>(prev_node[static_cast<size_t>(v)])]
                         [static_cast<size_t>(prev_edge[static_cast<size_t>(v)])];
        ed.cap -= push;
        graph_[static_cast<size_t>(ed.to)][static_cast<size_t>(ed.rev)].cap += push;
        total += push * ed.cost;
      }
    }
    return total;
  }

 private:
  std::vector<std::vector<Edge>> graph_;
};

}  // namespace

double exact_ot_cost(const std::vector<double>& mu, const std::vector<double>& nu,
                     const std::vector<double>& cost) {
  const int n = static_cast<int>(mu.size());
  const int m = static_cast<int>(nu.size());
  if (n == 0 || m == 0) throw ContractError("exact_ot: empty support");
  if (n > 10 || m > 10)
    throw ContractError("exact_ot: support too large (" + std::to_string(n) + "x" +
                        std::to_string(m) + ", limit 10)");
  if (cost.size() != static_cast<size_t>(n) * static_cast<size_t>(m))
    throw ContractError("exact_ot: cost matrix size mismatch");
  double su = 0.0, sv = 0.0;
  for (double v : mu) {
    if (v < 0.0) throw ContractError("exact_ot: negative mass");
    su += v;
  }
  for (double v : nu) {
    if (v < 0.0) throw ContractError("exact_ot: negative mass");
    sv += v;
  }
  if (std::abs(su - sv) > 1e-9)
    throw ContractError("exact_ot: total masses differ: " + std::to_string(su) + " vs " +
                        std::to_string(sv));

  const int s = 0, t = n + m + 1;
  MinCostFlow flow(n + m + 2);
  for (int i = 0; i < n; ++i) flow.add_edge(s, 1 + i, mu[static_cast<size_t>(i)], 0.0);
  for (int j = 0; j < m; ++j) flow.add_edge(1 + n + j, t, nu[static_cast<size_t>(j)], 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      flow.add_edge(1 + i, 1 + n + j, std::numeric_limits<double>::infinity(),
                    cost[static_cast<size_t>(i * m + j)]);
  return flow.run(s, t);
}

double exact_ot_cost(const std::vector<double>& mu, const std::vector<Point2>& mu_pts,
                     const std::vector<double>& nu, const std::vector<Point2>& nu_pts) {
  if (mu.size() != mu_pts.size() || nu.size() != nu_pts.size())
    throw ContractError("exact_ot: weights/points length mismatch");
  std::vector<double> cost(mu.size() * nu.size());
  for (size_t i = 0; i < mu.size(); ++i)
    for (size_t j = 0; j < nu.size(); ++j)
      cost[i * nu.size() + j] = std::hypot(mu_pts[i].x - nu_pts[j].x, mu_pts[i].y - nu_pts[j].y);
  return exact_ot_cost(mu, nu, cost);
}

}  // namespace stmtl
