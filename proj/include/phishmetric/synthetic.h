#pragma once

#include <cstdint>
#include <filesystem>

#include "phishmetric/corpus.h"

namespace phishmetric {

// Generated stand-in for a screenshot corpus. Every brand has a logo
// (icon plus wordmark), a palette and a sign-in page design. Trusted pages
// share the brand header but vary in layout, and one in three is the
// sign-in page with small drift. Most phishing pages imitate the sign-in
// page with stronger jitter; the rest paste the logo onto attacker layouts.
// Benign pages come from brands outside the list and use both page kinds.
struct DeskCorpusOptions {
  int websites = 12;
  int trusted_per_site = 20;
  int phishing_per_site = 5;
  int benign_pages = 60;
  int benign_brands = 20;
  int width = 320;
  int height = 240;
  std::uint64_t seed = 7;
};

// Writes PNGs under dir/images and the manifest to dir/manifest.tsv.
CorpusManifest generate_desk_corpus(const std::filesystem::path& dir, const DeskCorpusOptions& options = {});

}  // namespace phishmetric
