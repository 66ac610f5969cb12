#include "pillarnest/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "pillarnest/rng.hpp"

namespace pillarnest {

GradCheckResult grad_check(const std::function<Tensor()>& loss_builder,
                           const std::vector<Parameter>& params,
                           const GradCheckOptions& opts) {
  GradCheckResult res;

  // analytic pass
  for (const Parameter& p : params) const_cast<Tensor&>(p.tensor).zero_grad();
  backward(loss_builder());
  std::vector<std::vector<float>> analytic;
  analytic.reserve(params.size());
  for (const Parameter& p : params) {
    const float* g = p.tensor.grad();
    if (g)
      analytic.emplace_back(g, g + p.tensor.numel());
    else
      analytic.emplace_back(size_t(p.tensor.numel()), 0.0f);
  }

  // element selection
  struct Entry { size_t pi; int64_t ei; };
  std::vector<Entry> entries;
  if (opts.max_entries > 0) {
    Rng rng(opts.sample_seed, 0x67726164);
    int64_t total = 0;
    for (const Parameter& p : params) total += p.tensor.numel();
    for (int k = 0; k < opts.max_entries; ++k) {
      int64_t flat = int64_t(rng.uniform_int(uint64_t(total)));
      for (size_t pi = 0; pi < params.size(); ++pi) {
        if (flat < params[pi].tensor.numel()) {
          entries.push_back({pi, flat});
          break;
        }
        flat -= params[pi].tensor.numel();
      }
    }
  } else {
    for (size_t pi = 0; pi < params.size(); ++pi)
      for (int64_t ei = 0; ei < params[pi].tensor.numel(); ++ei) entries.push_back({pi, ei});
  }

  NoGradGuard ng;
  for (const Entry& e : entries) {
    Tensor t = params[e.pi].tensor;
    float* slot = t.data() + e.ei;
    const float orig = *slot;
    *slot = orig + opts.h;
    float lp = loss_builder().item();
    *slot = orig - opts.h;
    float lm = loss_builder().item();
    *slot = orig;

    float fd = (lp - lm) / (2.0f * opts.h);
    float ad = analytic[e.pi][size_t(e.ei)];
    float diff = std::fabs(fd - ad);
    float denom = std::max(std::fabs(fd), std::fabs(ad));
    float rel = denom > 0.0f ? diff / denom : 0.0f;
    ++res.checked;
    bool pass = diff <= opts.atol + opts.rtol * denom;
    if (!pass) ++res.failed;
    if (rel > res.worst_rel || !pass) {
      res.worst_rel = std::max(res.worst_rel, rel);
      std::ostringstream os;
      os << params[e.pi].name << "[" << e.ei << "]: ad=" << ad << " fd=" << fd
         << " rel=" << rel;
      res.worst_detail = os.str();
    }
  }
  res.ok = res.failed == 0;
  return res;
}

}  // namespace pillarnest
