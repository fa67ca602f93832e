#pragma once

#include <string>
#include <vector>

#include "pmt/common.hpp"

namespace pmt {

// Attention-pair accounting for the schemes the model family compares:
// dense self-attention, full-axis axial attention, patch-partitioned axial
// attention, and the three pyramid branches with span H/4 x W/4. Nominal
// counts follow the per-pixel budget formulas (ignoring border truncation);
// effective counts reflect the centered, border-truncated windows the
// kernel actually computes.
enum class SchemeKind {
  full,
  axial_full_span,
  medtrans_patched,
  pmtrans_short,
  pmtrans_mid,
  pmtrans_long,
};

inline constexpr SchemeKind kAllSchemes[] = {
    SchemeKind::full,           SchemeKind::axial_full_span, SchemeKind::medtrans_patched,
    SchemeKind::pmtrans_short,  SchemeKind::pmtrans_mid,     SchemeKind::pmtrans_long,
};

const char* scheme_name(SchemeKind kind);

struct AttentionScheme {
  SchemeKind kind;
  Index height;  // original image height
  Index width;   // original image width
};

// Exact rational with reduced terms and positive denominator.
struct ExactRatio {
  long long num = 0;
  long long den = 1;

  static ExactRatio of(long long num, long long den);
  bool operator==(const ExactRatio&) const = default;
  std::string str() const;
};

// Closed-form nominal pair count per the scheme's formula.
long long count_attention_pairs(const AttentionScheme& scheme);

// Closed-form count of the border-truncated windows (<= nominal).
long long effective_attention_pairs(const AttentionScheme& scheme);

struct PairEnumeration {
  long long nominal = 0;    // untruncated nominal-window relation, cyclic-free
  long long effective = 0;  // centered windows truncated at borders
};

// Pixel-by-pixel mask enumeration; the oracle for the closed forms.
// Refuses images with more than 4096 pixels.
PairEnumeration brute_force_pair_enumeration(const AttentionScheme& scheme);

// Patch-to-patch pair count for a p x p patch embedding; formula only,
// there is no pixel-level relation to enumerate.
long long vit_patch_pairs(Index height, Index width, Index patch);

struct ReceptiveField {
  Index h = 0;
  Index w = 0;
};

// Extent on the original image reachable by a single attention layer of the
// given branch (span in branch grid, mapped back through the input rescale).
ReceptiveField receptive_field(SchemeKind branch, Index height, Index width);

struct SchemeRow {
  SchemeKind kind;
  std::string scheme;
  Index height = 0, width = 0;
  long long nominal = 0;
  long long effective = 0;
  ExactRatio ratio_vs_medtrans;  // nominal / ((H+W) * H * W)
  std::string note;
};

struct AttentionCostReport {
  Index height = 0, width = 0;
  std::vector<SchemeRow> rows;
  std::vector<std::pair<std::string, ReceptiveField>> receptive_fields;
  ExactRatio long_range_ratio;        // pmtrans_long vs the global axial baseline
  bool ratio_matches_published_216 = false;
  bool enumerated = false;            // brute-force cross-check ran
  bool counts_verified = false;       // closed forms matched the enumeration

  std::string table() const;
  std::string csv() const;
};

AttentionCostReport scheme_comparison_report(Index height, Index width);

}  // namespace pmt
