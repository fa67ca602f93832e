#include "pmt/complexity.hpp"

#include <iomanip>
#include <numeric>
#include <sstream>

#include "pmt/attention.hpp"

namespace pmt {

namespace {

constexpr long long kEnumerationPixelBound = 4096;
constexpr long long kFormulaPixelBound = 100'000'000;

struct SchemeGeometry {
  Index grid_h, grid_w;    // grid the attention runs on
  Index span_h, span_w;    // window widths on that grid (0 = full axis)
  bool windowed;           // centered windows vs full-axis passes
  bool patched;            // full-axis passes within (H/4)x(W/4) patches
};

void validate_scheme(const AttentionScheme& s) {
  if (s.height < 1 || s.width < 1)
    throw ConfigError("scheme needs positive dimensions, got " + std::to_string(s.height) + "x" +
                      std::to_string(s.width));
  if (s.height * s.width > kFormulaPixelBound)
    throw ContractError("size-over-bound", "image has more than " +
                                               std::to_string(kFormulaPixelBound) + " pixels");
  switch (s.kind) {
    case SchemeKind::full:
    case SchemeKind::axial_full_span:
      return;
    default:
      if (s.height % 4 != 0 || s.width % 4 != 0 || s.height < 4 || s.width < 4)
        throw ConfigError("scheme " + std::string(scheme_name(s.kind)) + " needs H, W >= 4 and divisible by 4, got " +
                          std::to_string(s.height) + "x" + std::to_string(s.width));
  }
}

SchemeGeometry geometry(const AttentionScheme& s) {
  const Index H = s.height, W = s.width;
  switch (s.kind) {
    case SchemeKind::full:
      return {H, W, 0, 0, false, false};
    case SchemeKind::axial_full_span:
      return {H, W, 0, 0, false, false};
    case SchemeKind::medtrans_patched:
      return {H, W, 0, 0, false, true};
    case SchemeKind::pmtrans_short:
      return {H, W, H / 4, W / 4, true, false};
    case SchemeKind::pmtrans_mid:
      return {H / 2, W / 2, H / 4, W / 4, true, false};
    case SchemeKind::pmtrans_long:
      return {H / 4, W / 4, H / 4, W / 4, true, false};
  }
  throw ConfigError("unknown scheme kind");
}

}  // namespace

const char* scheme_name(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::full: return "full";
    case SchemeKind::axial_full_span: return "axial_full_span";
    case SchemeKind::medtrans_patched: return "medtrans_patched";
    case SchemeKind::pmtrans_short: return "pmtrans_short";
    case SchemeKind::pmtrans_mid: return "pmtrans_mid";
    case SchemeKind::pmtrans_long: return "pmtrans_long";
  }
  return "?";
}

ExactRatio ExactRatio::of(long long num, long long den) {
  if (den == 0) throw ContractError("zero-denominator", "exact ratio with denominator 0");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const long long g = std::gcd(num < 0 ? -num : num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  return {num, den};
}

std::string ExactRatio::str() const {
  return std::to_string(num) + "/" + std::to_string(den);
}

long long count_attention_pairs(const AttentionScheme& s) {
  validate_scheme(s);
  const long long H = s.height, W = s.width;
  switch (s.kind) {
    case SchemeKind::full:
      return H * W * H * W;
    case SchemeKind::axial_full_span:
      return H * W * (H + W);
    case SchemeKind::medtrans_patched:
      return (H / 4 + W / 4) * H * W;
    case SchemeKind::pmtrans_short:
      return (H / 4 + W / 4) * H * W;
    case SchemeKind::pmtrans_mid:
      return (H / 4 + W / 4) * H * W / 4;
    case SchemeKind::pmtrans_long:
      return (H / 4 + W / 4) * H * W / 16;
  }
  throw ConfigError("unknown scheme kind");
}

long long effective_attention_pairs(const AttentionScheme& s) {
  validate_scheme(s);
  const SchemeGeometry g = geometry(s);
  if (!g.windowed) return count_attention_pairs(s);
  long long per_row = 0, per_col = 0;
  for (Index j = 0; j < g.grid_w; ++j) per_row += span_window(j, g.span_w, g.grid_w).width();
  for (Index i = 0; i < g.grid_h; ++i) per_col += span_window(i, g.span_h, g.grid_h).width();
  // every row contributes its width-axis windows, every column its height-axis windows
  return g.grid_h * per_row + g.grid_w * per_col;
}

PairEnumeration brute_force_pair_enumeration(const AttentionScheme& s) {
  validate_scheme(s);
  if (static_cast<long long>(s.height) * s.width > kEnumerationPixelBound)
    throw ContractError("size-over-bound",
                        "enumeration bounded to " + std::to_string(kEnumerationPixelBound) +
                            " pixels, got " + std::to_string(s.height * s.width));
  const SchemeGeometry g = geometry(s);
  PairEnumeration result;

  if (s.kind == SchemeKind::full) {
    for (Index p = 0; p < g.grid_h * g.grid_w; ++p)
      for (Index q = 0; q < g.grid_h * g.grid_w; ++q) ++result.nominal;
    result.effective = result.nominal;
    return result;
  }

  if (!g.windowed) {
    // full-axis passes, optionally restricted to (H/4)x(W/4) patches
    const Index ph = g.patched ? s.height / 4 : g.grid_h;
    const Index pw = g.patched ? s.width / 4 : g.grid_w;
    for (Index i = 0; i < g.grid_h; ++i) {
      for (Index j = 0; j < g.grid_w; ++j) {
        const Index row_lo = (i / ph) * ph, col_lo = (j / pw) * pw;
        for (Index r = row_lo; r < row_lo + ph; ++r) ++result.nominal;  // height pass
        for (Index c = col_lo; c < col_lo + pw; ++c) ++result.nominal;  // width pass
      }
    }
    result.effective = result.nominal;
    return result;
  }

  for (Index i = 0; i < g.grid_h; ++i) {
    for (Index j = 0; j < g.grid_w; ++j) {
      // nominal relation: one slot per window offset, never wrapped
      for (Index d = -(g.span_h / 2); d <= (g.span_h - 1) / 2; ++d) ++result.nominal;
      for (Index d = -(g.span_w / 2); d <= (g.span_w - 1) / 2; ++d) ++result.nominal;
      // effective relation: centered windows truncated at the borders
      const SpanWindow wh = span_window(i, g.span_h, g.grid_h);
      for (Index r = wh.lo; r <= wh.hi; ++r) ++result.effective;
      const SpanWindow ww = span_window(j, g.span_w, g.grid_w);
      for (Index c = ww.lo; c <= ww.hi; ++c) ++result.effective;
    }
  }
  return result;
}

long long vit_patch_pairs(Index height, Index width, Index patch) {
  if (patch < 1 || height % patch != 0 || width % patch != 0)
    throw ConfigError("patch size " + std::to_string(patch) + " must divide " +
                      std::to_string(height) + "x" + std::to_string(width));
  const long long tokens = (height / patch) * (width / patch);
  return tokens * tokens;  // H^2 W^2 / p^4
}

ReceptiveField receptive_field(SchemeKind branch, Index height, Index width) {
  if (height % 4 != 0 || width % 4 != 0 || height < 4 || width < 4)
    throw ConfigError("receptive field needs H, W >= 4 and divisible by 4");
  const Index span_h = height / 4, span_w = width / 4;
  switch (branch) {
    case SchemeKind::pmtrans_short:
      return {span_h, span_w};  // scale 1
    case SchemeKind::pmtrans_mid:
      return {span_h * 2, span_w * 2};  // branch grid is half resolution
    case SchemeKind::pmtrans_long:
      return {span_h * 4, span_w * 4};  // branch grid is quarter resolution
    default:
      throw ConfigError("receptive_field expects a pyramid branch scheme");
  }
}

AttentionCostReport scheme_comparison_report(Index height, Index width) {
  AttentionCostReport report;
  report.height = height;
  report.width = width;

  // the comparison baseline: global axial attention on the full grid
  const long long medtrans_global = count_attention_pairs({SchemeKind::axial_full_span, height, width});
  const bool can_enumerate = static_cast<long long>(height) * width <= kEnumerationPixelBound;
  report.enumerated = can_enumerate;
  report.counts_verified = true;

  for (SchemeKind kind : kAllSchemes) {
    AttentionScheme scheme{kind, height, width};
    SchemeRow row;
    row.kind = kind;
    row.scheme = scheme_name(kind);
    row.height = height;
    row.width = width;
    row.nominal = count_attention_pairs(scheme);
    row.effective = effective_attention_pairs(scheme);
    row.ratio_vs_medtrans = ExactRatio::of(row.nominal, medtrans_global);
    if (can_enumerate) {
      const PairEnumeration e = brute_force_pair_enumeration(scheme);
      if (e.nominal != row.nominal || e.effective != row.effective) {
        report.counts_verified = false;
        row.note = "MISMATCH: enumeration found " + std::to_string(e.nominal) + "/" +
                   std::to_string(e.effective);
      }
    }
    if (kind == SchemeKind::pmtrans_long) {
      report.long_range_ratio = row.ratio_vs_medtrans;
      report.ratio_matches_published_216 = (row.ratio_vs_medtrans == ExactRatio::of(1, 216));
      if (row.note.empty())
        row.note = report.ratio_matches_published_216
                       ? "matches the quoted 1/216"
                       : "ratio derives to exactly " + row.ratio_vs_medtrans.str() +
                             "; the quoted 1/216 does not follow from these pair counts";
    }
    report.rows.push_back(std::move(row));
  }

  report.receptive_fields = {
      {"short", receptive_field(SchemeKind::pmtrans_short, height, width)},
      {"mid", receptive_field(SchemeKind::pmtrans_mid, height, width)},
      {"long", receptive_field(SchemeKind::pmtrans_long, height, width)},
  };
  return report;
}

std::string AttentionCostReport::table() const {
  std::ostringstream os;
  os << "attention pair audit for " << height << "x" << width << "\n";
  os << std::left << std::setw(18) << "scheme" << std::right << std::setw(16) << "nominal"
     << std::setw(16) << "effective" << std::setw(14) << "vs_global" << "  note\n";
  for (const auto& row : rows) {
    os << std::left << std::setw(18) << row.scheme << std::right << std::setw(16) << row.nominal
       << std::setw(16) << row.effective << std::setw(14) << row.ratio_vs_medtrans.str() << "  "
       << row.note << "\n";
  }
  os << "receptive fields on the original image (single attention layer):\n";
  for (const auto& [name, rf] : receptive_fields)
    os << "  " << std::left << std::setw(6) << name << " " << rf.h << "x" << rf.w << "\n";
  os << "counts " << (enumerated ? (counts_verified ? "verified against brute-force enumeration"
                                                    : "DISAGREE with brute-force enumeration")
                                 : "not enumerated (size over desk bound)")
     << "\n";
  return os.str();
}

std::string AttentionCostReport::csv() const {
  std::ostringstream os;
  os << "scheme,H,W,nominal_pairs,effective_pairs,ratio_vs_medtrans_num,ratio_vs_medtrans_den,note\n";
  for (const auto& row : rows) {
    os << row.scheme << ',' << row.height << ',' << row.width << ',' << row.nominal << ','
       << row.effective << ',' << row.ratio_vs_medtrans.num << ',' << row.ratio_vs_medtrans.den
       << ',' << '"' << row.note << '"' << "\n";
  }
  return os.str();
}

}  // namespace pmt
