// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cruforge/curation.hpp"
#include "cruforge/judge.hpp"
#include "cruforge/prompts.hpp"

namespace cruforge::curation {

namespace {

int tokens_at(int w, int h, double f, int patch) { return token_count(scaled_dim(w, f), scaled_dim(h, f), patch); }

bool in_range(int tokens) { return tokens >= kMinTokens && tokens <= kMaxTokens; }

}  // namespace

// Candidates are the factors k/w and k/h that land one side exactly on k pixels.
double repair_factor(int width, int height, double f, int patch) {
  int t = tokens_at(width, height, f, patch);
  if (in_range(t)) return f;
  const bool raise = t < kMinTokens;
  long kw = raise ? static_cast<long>(std::floor(f * width)) + 1 : static_cast<long>(std::ceil(f * width)) - 1;
  long kh = raise ? static_cast<long>(std::floor(f * height)) + 1 : static_cast<long>(std::ceil(f * height)) - 1;
  while (kw >= 1 && kh >= 1 && kw <= 64L * kMaxTokens && kh <= 64L * kMaxTokens) {
    double cw = static_cast<double>(kw) / width;
    double ch = static_cast<double>(kh) / height;
    double c = raise ? std::min(cw, ch) : std::max(cw, ch);
    if (in_range(tokens_at(width, height, c, patch))) return c;
    if (cw == c) kw += raise ? 1 : -1;
    if (ch == c) kh += raise ? 1 : -1;
  }
  throw Error("TokenClampUnreachable", fmt::format("no factor near {} keeps {}x{} within [{}, {}] tokens", f, width,
                                                   height, kMinTokens, kMaxTokens));
}

std::vector<ScaleVariant> make_scale_variant_shapes(int width, int height, int patch) {
  std::vector<ScaleVariant> out;
  for (double nominal : kScaleFactors) {
    ScaleVariant v;
    v.nominal = nominal;
    v.factor = repair_factor(width, height, nominal, patch);
    v.adjusted = v.factor != nominal;
    v.width = scaled_dim(width, v.factor);
    v.height = scaled_dim(height, v.factor);
    v.tokens = token_count(v.width, v.height, patch);
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<ScaleVariant> make_scale_variants(const Raster& image, int patch) {
  auto out = make_scale_variant_shapes(image.width, image.height, patch);
  auto original = std::make_shared<const Raster>(image);
  for (auto& v : out) {
    if (v.width == image.width && v.height == image.height)
      v.pixels = original;
    else
      v.pixels = std::make_shared<const Raster>(resize_bilinear(image, v.width, v.height));
  }
  return out;
}

std::string final_answer_of(std::string_view path_text) {
  if (auto boxed = extract_boxed(path_text)) return std::string(trim(*boxed));
  std::string_view rest = trim(path_text);
  auto nl = rest.rfind('\n');
  return std::string(trim(nl == std::string_view::npos ? rest : rest.substr(nl + 1)));
}

std::string sample_key(const std::string& id, double nominal, int k) {
  return fmt::format("{}@{}#{}", id, format_real(nominal), k);
}

SamplingResult sample_paths(ChatBackend& policy, ChatBackend& judge, const std::string& id,
                            const std::string& question, const std::string& ground_truth,
                            const std::vector<ScaleVariant>& variants, int k) {
  if (k <= 0) throw std::invalid_argument("k must be positive");
  SamplingResult result;
  const auto segments = prompts::render(prompts::Template::ZeroShotCot, {{"question", question}});
  for (const auto& v : variants) {
    ScaleAccuracy acc{v.nominal, 0, k};
    ImagePart image{ObservationRef{0, v.width, v.height}, v.pixels, {}};
    for (int i = 0; i < k; ++i) {
      ChatRequest req;
      req.tag = "sample";
      req.key = sample_key(id, v.nominal, i);
      req.sample = i;
      req.messages.push_back(user_message(segments, {{"image", image}}));
      SampledPath path;
      path.sample = i;
      path.nominal = v.nominal;
      path.text = policy.generate(req);
      path.predicted = final_answer_of(path.text);
      path.correct = judge_answer(judge, question, ground_truth, path.predicted, req.key, "verify") == 1;
      acc.correct += path.correct ? 1 : 0;
      result.paths.push_back(std::move(path));
    }
    result.accuracy.push_back(acc);
  }
  return result;
}

std::optional<ScalePair> select_scale_pair(const std::vector<ScaleAccuracy>& accuracy,
                                           const std::vector<ScaleVariant>& variants) {
  auto pixels_of = [&](double nominal) -> long long {
    for (const auto& v : variants)
      if (v.nominal == nominal) return v.pixel_count();
    throw std::invalid_argument(fmt::format("no variant for factor {}", nominal));
  };

  std::optional<ScalePair> best;
  long long best_plus = 0, best_minus = 1;
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    for (std::size_t j = i + 1; j < accuracy.size(); ++j) {
      const ScaleAccuracy* lo = &accuracy[i];
      const ScaleAccuracy* hi = &accuracy[j];
      if (lo->accuracy() > hi->accuracy()) std::swap(lo, hi);
      double gap = hi->accuracy() - lo->accuracy();
      if (gap < kMinAccuracyGap - 1e-9) continue;
      long long p_plus = pixels_of(hi->nominal), p_minus = pixels_of(lo->nominal);
      ScalePair cand{lo->nominal, hi->nominal, gap, static_cast<double>(p_plus) / static_cast<double>(p_minus)};
      bool better = false;
      if (!best) {
        better = true;
      } else {
        // Exact ratio comparison by cross-multiplication.
        long long lhs = p_plus * best_minus, rhs = best_plus * p_minus;
        if (lhs != rhs)
          better = lhs > rhs;
        else if (std::abs(cand.gap - best->gap) > 1e-9)
          better = cand.gap > best->gap;
        else
          better = cand.f_minus < best->f_minus;
      }
      if (better) {
        best = cand;
        best_plus = p_plus;
        best_minus = p_minus;
      }
    }
  }
  return best;
}

std::string_view to_string(PathSource s) {
  switch (s) {
    case PathSource::P0: return "P0";
    case PathSource::P1: return "P1";
    case PathSource::P2: return "P2";
  }
  return {};
}

std::optional<PathSource> path_source_from_string(std::string_view s) {
  for (auto p : {PathSource::P0, PathSource::P1, PathSource::P2})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

MissingPathClass::MissingPathClass(PathSource which)
    : Error("MissingPathClass", std::string(to_string(which))), which_(which) {}

BasePaths pick_base_paths(const std::vector<SampledPath>& paths, const ScalePair& pair) {
  auto longest = [&](double nominal, bool correct, PathSource which) {
    const SampledPath* best = nullptr;
    for (const auto& p : paths) {
      if (p.nominal != nominal || p.correct != correct) continue;
      if (!best || p.length() > best->length() || (p.length() == best->length() && p.sample < best->sample))
        best = &p;
    }
    if (!best) throw MissingPathClass(which);
    return *best;
  };
  return BasePaths{longest(pair.f_plus, true, PathSource::P0), longest(pair.f_minus, false, PathSource::P1),
                   longest(pair.f_plus, false, PathSource::P2)};
}

}  // namespace cruforge::curation
