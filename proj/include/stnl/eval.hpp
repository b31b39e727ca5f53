#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "stnl/tensor.hpp"
#include "stnl/textio.hpp"

namespace stnl {

/// Query/gallery retrieval setup: identity labels, optional camera labels,
/// and the [nQ, nG] distance matrix between the two sets.
template <typename T>
struct EvalProtocol {
  std::vector<int> query_ids;
  std::vector<int> gallery_ids;
  std::vector<int> query_cams;    // empty means no camera information
  std::vector<int> gallery_cams;
  Tensor<T> distances;
};

struct EvalResult {
  std::vector<double> cmc;  // cumulative match rate at ranks 1..R
  double map = 0.0;
  std::size_t n_valid = 0;
  std::size_t n_skipped = 0;  // queries with no valid gallery match
};

namespace detail {

template <typename T>
void check_protocol(const EvalProtocol<T>& p) {
  if (p.distances.rank() != 2) {
    throw std::invalid_argument("eval: distances must be [nQ,nG], got " +
                                shape_string(p.distances.shape()));
  }
  const std::size_t nq = p.distances.dim(0), ng = p.distances.dim(1);
  if (p.query_ids.size() != nq || p.gallery_ids.size() != ng) {
    throw std::invalid_argument("eval: label counts (" + std::to_string(p.query_ids.size()) + ", " +
                                std::to_string(p.gallery_ids.size()) +
                                ") do not match distance matrix " +
                                shape_string(p.distances.shape()));
  }
  const bool has_cams = !p.query_cams.empty() || !p.gallery_cams.empty();
  if (has_cams && (p.query_cams.size() != nq || p.gallery_cams.size() != ng)) {
    throw std::invalid_argument("eval: camera label counts do not match distance matrix");
  }
  for (std::size_t i = 0; i < p.distances.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(p.distances[i])) || p.distances[i] < T(0)) {
      throw std::invalid_argument("eval: distances must be finite and nonnegative");
    }
  }
}

// Gallery indices for one query, exclusions applied, sorted by distance with
// ties broken toward the lower gallery index.
template <typename T>
std::vector<std::size_t> ranked_gallery(const EvalProtocol<T>& p, std::size_t q) {
  const std::size_t ng = p.gallery_ids.size();
  const bool has_cams = !p.query_cams.empty();
  std::vector<std::size_t> order;
  order.reserve(ng);
  for (std::size_t j = 0; j < ng; ++j) {
    if (has_cams && p.gallery_ids[j] == p.query_ids[q] && p.gallery_cams[j] == p.query_cams[q])
      continue;
    order.push_back(j);
  }
  const T* drow = p.distances.data() + q * ng;
  std::sort(order.begin(), order.end(), [drow](std::size_t a, std::size_t b) {
    if (drow[a] != drow[b]) return drow[a] < drow[b];
    return a < b;
  });
  return order;
}

}  // namespace detail

/// CMC curve and mAP in one pass over the queries. Queries with no same-id
/// gallery entry after exclusions are skipped and counted in n_skipped.
template <typename T>
EvalResult evaluate_protocol(const EvalProtocol<T>& p, std::size_t max_rank) {
  detail::check_protocol(p);
  if (max_rank < 1) throw std::invalid_argument("eval: max_rank must be >= 1");
  const std::size_t nq = p.query_ids.size();

  EvalResult res;
  std::vector<std::size_t> first_match_counts(max_rank, 0);
  double ap_sum = 0.0;

  for (std::size_t q = 0; q < nq; ++q) {
    const std::vector<std::size_t> order = detail::ranked_gallery(p, q);
    std::size_t n_correct = 0;
    std::size_t first_rank = 0;  // 1-based; 0 = not found
    double ap = 0.0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (p.gallery_ids[order[pos]] == p.query_ids[q]) {
        ++n_correct;
        if (first_rank == 0) first_rank = pos + 1;
        ap += static_cast<double>(n_correct) / static_cast<double>(pos + 1);
      }
    }
    if (n_correct == 0) {
      ++res.n_skipped;
      continue;
    }
    ++res.n_valid;
    ap_sum += ap / static_cast<double>(n_correct);
    if (first_rank >= 1 && first_rank <= max_rank) ++first_match_counts[first_rank - 1];
  }

  if (res.n_valid == 0) throw std::runtime_error("eval: no valid queries");

  res.cmc.resize(max_rank);
  std::size_t cum = 0;
  for (std::size_t r = 0; r < max_rank; ++r) {
    cum += first_match_counts[r];
    res.cmc[r] = static_cast<double>(cum) / static_cast<double>(res.n_valid);
  }
  res.map = ap_sum / static_cast<double>(res.n_valid);
  return res;
}

template <typename T>
std::vector<double> cmc(const EvalProtocol<T>& p, std::size_t max_rank) {
  return evaluate_protocol(p, max_rank).cmc;
}

template <typename T>
double mean_ap(const EvalProtocol<T>& p) {
  return evaluate_protocol(p, 1).map;
}

/// Euclidean distances between query rows and gallery rows; agrees with
/// pairwise_distances on the concatenated inputs.
template <typename T>
Tensor<T> distance_matrix(const Tensor<T>& qf, const Tensor<T>& gf) {
  if (qf.rank() != 2 || gf.rank() != 2 || qf.dim(1) != gf.dim(1)) {
    throw std::invalid_argument("distance_matrix: dimension mismatch " + shape_string(qf.shape()) +
                                " vs " + shape_string(gf.shape()));
  }
  const std::size_t nq = qf.dim(0), ng = gf.dim(0), d = qf.dim(1);
  Tensor<T> out({nq, ng});
  for (std::size_t i = 0; i < nq; ++i) {
    const T* fi = qf.data() + i * d;
    for (std::size_t j = 0; j < ng; ++j) {
      const T* fj = gf.data() + j * d;
      T sq = T(0);
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = fi[k] - fj[k];
        sq += diff * diff;
      }
      out(i, j) = std::sqrt(sq);
    }
  }
  return out;
}

/// CSV rendering: one `rank,cmc` line per requested rank, then a
/// `map,<value>,n_valid,<count>` footer.
inline std::string eval_result_csv(const EvalResult& res, const std::vector<std::size_t>& ranks) {
  std::string out = "rank,cmc\n";
  for (std::size_t r : ranks) {
    if (r < 1 || r > res.cmc.size()) {
      throw std::invalid_argument("eval: rank " + std::to_string(r) + " outside computed range 1.." +
                                  std::to_string(res.cmc.size()));
    }
    out += std::to_string(r) + "," + format_g9(res.cmc[r - 1]) + "\n";
  }
  out += "map," + format_g9(res.map) + ",n_valid," + std::to_string(res.n_valid) + "\n";
  return out;
}

}  // namespace stnl
