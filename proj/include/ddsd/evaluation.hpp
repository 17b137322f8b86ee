#pragma once

// Scoring and detection-error-tradeoff evaluation.
//
// Operating points: accept an utterance as device-directed iff its score is
// >= the threshold (ties accept). Thresholds are the sorted distinct scores
// plus one sentinel below (accept everything: FAR=1, FRR=0) and one above
// (reject everything: FAR=0, FRR=1). The equal error rate is found where
// FAR - FRR changes sign between adjacent points, linearly interpolating
// both rates to the crossing — a step-function DET curve generically never
// realizes FAR == FRR exactly at a computed threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddsd/common.hpp"
#include "ddsd/manifest.hpp"

namespace ddsd {

struct ScoredExample {
  std::string id;
  Label label = Label::kNonDirected;
  double score = 0.0;
};

struct DetPoint {
  double threshold = 0.0;
  double far = 0.0;  // fraction of non-directed accepted
  double frr = 0.0;  // fraction of directed rejected
};

struct DetCurve {
  std::vector<DetPoint> points;  // threshold ascending
  double eer = 0.0;
  double eer_threshold = 0.0;
};

inline DetCurve compute_det(const std::vector<ScoredExample>& scored) {
  std::vector<double> dir, non;
  for (const auto& s : scored) {
    if (!(std::isfinite(s.score) && s.score >= 0.0 && s.score <= 1.0))
      throw ValidationError("score out of [0,1] for example " + s.id);
    (s.label == Label::kDirected ? dir : non).push_back(s.score);
  }
  if (dir.empty() || non.empty())
    throw ValidationError("both classes are required to compute a DET curve");
  std::sort(dir.begin(), dir.end());
  std::sort(non.begin(), non.end());

  std::vector<double> thresholds;
  {
    std::vector<double> all = dir;
    all.insert(all.end(), non.begin(), non.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    thresholds.reserve(all.size() + 2);
    thresholds.push_back(all.front() - 1.0);  // below: accept everything
    thresholds.insert(thresholds.end(), all.begin(), all.end());
    thresholds.push_back(all.back() + 1.0);  // above: reject everything
  }

  DetCurve curve;
  curve.points.reserve(thresholds.size());
  const double n_dir = static_cast<double>(dir.size());
  const double n_non = static_cast<double>(non.size());
  for (double t : thresholds) {
    // accepted <=> score >= t.
    const auto non_ge =
        non.end() - std::lower_bound(non.begin(), non.end(), t);  // non-directed accepted
    const auto dir_lt =
        std::lower_bound(dir.begin(), dir.end(), t) - dir.begin();  // directed rejected
    curve.points.push_back(
        {t, static_cast<double>(non_ge) / n_non, static_cast<double>(dir_lt) / n_dir});
  }

  // Locate the sign change of d = FAR - FRR; d starts at +1 and ends at -1.
  for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
    const DetPoint& p = curve.points[i];
    const DetPoint& q = curve.points[i + 1];
    const double dp = p.far - p.frr;
    const double dq = q.far - q.frr;
    if (dp == 0.0) {
      curve.eer = p.far;
      curve.eer_threshold = p.threshold;
      return curve;
    }
    if (dp > 0.0 && dq <= 0.0) {
      const double alpha = dp / (dp - dq);  // in (0, 1]
      curve.eer = p.far + alpha * (q.far - p.far);
      curve.eer_threshold = p.threshold + alpha * (q.threshold - p.threshold);
      return curve;
    }
  }
  throw InternalError("DET curve had no FAR/FRR crossing");
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

inline std::string det_curve_to_csv(const DetCurve& curve) {
  std::string out = "threshold,far,frr\n";
  char buf[96];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f\n", p.threshold, p.far, p.frr);
    out += buf;
  }
  return out;
}

inline void emit_det_csv(const DetCurve& curve, const std::filesystem::path& path) {
  write_text_file(path, det_curve_to_csv(curve));
}

inline DetCurve parse_det_csv(const std::string& text) {
  DetCurve curve;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "threshold,far,frr") throw FormatError("unexpected DET CSV header: " + line);
      header = false;
      continue;
    }
    DetPoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p.threshold, &p.far, &p.frr) != 3)
      throw FormatError("malformed DET CSV row: " + line);
    curve.points.push_back(p);
  }
  return curve;
}

inline std::string scores_to_csv(const std::vector<ScoredExample>& scored) {
  std::string out = "id,label,score\n";
  char buf[64];
  for (const auto& s : scored) {
    std::snprintf(buf, sizeof(buf), ",%s,%.9f\n", label_to_string(s.label).c_str(), s.score);
    out += s.id;
    out += buf;
  }
  return out;
}

inline std::vector<ScoredExample> parse_scores_csv(const std::string& text) {
  std::vector<ScoredExample> out;
  std::size_t pos = 0;
  bool header = true;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    if (header) {
      if (line != "id,label,score")
        throw FormatError("unexpected scores CSV header: " + line);
      header = false;
      continue;
    }
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw FormatError("malformed scores CSV row " + std::to_string(line_no) + ": " + line);
    ScoredExample s;
    s.id = line.substr(0, c1);
    try {
      s.label = label_from_string(line.substr(c1 + 1, c2 - c1 - 1));
    } catch (const Error&) {
      throw FormatError("unknown label on CSV row " + std::to_string(line_no) + ": " + line);
    }
    try {
      s.score = std::stod(line.substr(c2 + 1));
    } catch (const std::exception&) {
      throw FormatError("malformed score on CSV row " + std::to_string(line_no));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// SVG DET plot: FRR (y) against FAR (x), both axes clipped to [0, clip];
// points beyond the clip window are dropped. The EER point (eer, eer) is
// marked when it falls inside the window.
inline std::string det_curve_to_svg(const DetCurve& curve, double clip = 0.25) {
  if (!(clip > 0.0)) throw ValidationError("svg clip must be positive");
  const double size = 480.0, margin = 56.0;
  const double span = size - 2 * margin;
  const auto X = [&](double far) { return margin + span * (far / clip); };
  const auto Y = [&](double frr) { return size - margin - span * (frr / clip); };
  char buf[256];
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" "
         "viewBox=\"0 0 480 480\">\n";
  svg += "<rect width=\"480\" height=\"480\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
                "stroke=\"#444\"/>\n",
                margin, margin, span, span);
  svg += buf;
  // Axis labels and clip ticks.
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"14\" text-anchor=\"middle\">false "
                "acceptance rate</text>\n",
                size / 2, size - 12.0);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"16\" y=\"%.1f\" font-size=\"14\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 16 %.1f)\">false rejection rate</text>\n",
                size / 2, size / 2);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\">%.2f</text>\n", margin + span - 10,
                size - margin + 16, clip);
  svg += buf;
  // Polyline over in-window points.
  std::string pts;
  for (const auto& p : curve.points) {
    if (p.far > clip || p.frr > clip) continue;
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f ", X(p.far), Y(p.frr));
    pts += buf;
  }
  if (!pts.empty()) {
    svg += "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"" + pts +
           "\"/>\n";
  }
  if (curve.eer <= clip) {
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.6f\" cy=\"%.6f\" r=\"5\" fill=\"#c0392b\"/>\n"
                  "<text x=\"%.6f\" y=\"%.6f\" font-size=\"12\">EER %.4f</text>\n",
                  X(curve.eer), Y(curve.eer), X(curve.eer) + 8, Y(curve.eer) - 8, curve.eer);
    svg += buf;
  }
  svg += "</svg>\n";
  return svg;
}

inline void emit_det_svg(const DetCurve& curve, const std::filesystem::path& path,
                         double clip = 0.25) {
  write_text_file(path, det_curve_to_svg(curve, clip));
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalReport {
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::int64_t n_directed = 0;
  std::int64_t n_non_directed = 0;
  DetCurve curve;
  std::vector<ScoredExample> scored;
};

inline EvalReport make_report(std::vector<ScoredExample> scored) {
  EvalReport rep;
  rep.curve = compute_det(scored);
  rep.eer = rep.curve.eer;
  rep.eer_threshold = rep.curve.eer_threshold;
  for (const auto& s : scored)
    (s.label == Label::kDirected ? rep.n_directed : rep.n_non_directed) += 1;
  rep.scored = std::move(scored);
  return rep;
}

}  // namespace ddsd
