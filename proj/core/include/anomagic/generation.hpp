// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anomagic/clients.hpp"
#include "anomagic/mask_refinement.hpp"
#include "anomagic/model.hpp"
#include "anomagic/triplet_store.hpp"

namespace anomagic {

// ---- retrieval ------------------------------------------------------------

struct RetrievalQuery {
  std::string query;
  /// Keeps only records whose category or defect type equals the hint
  /// (case-insensitive).
  std::optional<std::string> category_hint;
};

struct CategoryMatch {
  std::string category;     // from the answer
  std::string defect_type;  // from the manifest
  bool exact = false;       // false: accepted by the client's adjudication
};

struct RetrievalResult {
  std::string answer;
  std::vector<std::string> categories;
  std::vector<CategoryMatch> matches;
  std::vector<std::string> triplet_ids;
  /// Set when nothing matched: nearest literal defect types per category.
  std::string diagnostic;
};

/// Splits an answer such as "cracks, holes and scratches." into categories.
std::vector<std::string> split_categories(const std::string& answer);

/// Asks the client for anomaly categories, then matches them to the
/// manifest's defect types: exact (case-insensitive) first, client
/// adjudication for the rest. Client failures raise RetrievalError.
RetrievalResult retrieve(const RetrievalQuery& query, const DatasetManifest& manifest,
                         MllmClient& client);

// ---- coarse masks ---------------------------------------------------------

enum class MaskShape { kEllipse, kPolygon, kBrushStroke, kFromFile };
enum class MaskPlacement { kUniform, kCenterBiased, kWithinForeground };

std::string to_string(MaskShape shape);
std::string to_string(MaskPlacement placement);
MaskShape parse_mask_shape(const std::string& s);
MaskPlacement parse_mask_placement(const std::string& s);

struct CoarseMaskSpec {
  MaskShape shape = MaskShape::kEllipse;
  double min_area = 0.01;  // fractions of the image area
  double max_area = 0.05;
  MaskPlacement placement = MaskPlacement::kCenterBiased;
  std::uint64_t seed = 0;
  std::size_t max_ellipses = 3;  // ellipse unions use 1..max_ellipses
  std::size_t max_retries = 200;
  std::filesystem::path file;    // kFromFile
  std::optional<Mask> foreground;  // kWithinForeground
};

/// JSON object with keys shape, min_area, max_area, placement, seed,
/// max_ellipses, max_retries, file, foreground (a mask path). Unknown keys
/// raise ConfigError.
CoarseMaskSpec parse_mask_spec(const std::string& json_text);
std::string format_mask_spec(const CoarseMaskSpec& spec);

/// Random mask whose foreground fraction lies in [min_area, max_area]
/// (inclusive, after rounding to whole pixels). Deterministic per seed.
/// Raises SamplingError when no draw satisfies the constraints.
Mask sample_coarse_mask(const CoarseMaskSpec& spec, std::size_t height, std::size_t width);

// ---- generation -----------------------------------------------------------

struct GenerationConfig {
  std::size_t ddim_steps = 20;
  RefineConfig refine;
};

struct GenerationResult {
  Image input;
  Mask coarse_mask;
  Image generated;  // 8-bit quantized, as written to disk
  Mask refined_mask;
  std::string provenance;  // JSON object describing the prompt
  std::uint64_t seed = 0;
};

/// Inpaints the prompt's anomaly into `target` inside a sampled coarse
/// mask. Randomness: the mask uses `mask_spec.seed`, the latent noise
/// `seed`.
GenerationResult generate(const Image& target, const PromptInput& prompt, const std::string& provenance,
                          const CoarseMaskSpec& mask_spec, const Model& model,
                          const ChangeDetector& detector, const GenerationConfig& config,
                          std::uint64_t seed);

enum class TripletSelection { kRandom, kRoundRobin };

struct BatchRequest {
  std::vector<Image> targets;
  std::vector<std::string> target_names;  // recorded in provenance
  /// Either candidate triplets (one chosen per generation) or a fixed prompt.
  std::vector<const Triplet*> candidates;
  std::optional<PromptInput> prompt;
  std::string prompt_provenance;  // JSON object for the fixed prompt
  std::size_t count = 1;          // generations per target
  TripletSelection selection = TripletSelection::kRandom;
  CoarseMaskSpec mask_spec;       // its seed is replaced per generation
  std::uint64_t seed = 0;
};

/// Generation k (target-major order) uses seed derive_seed(seed, k); its
/// mask seed and triplet draw derive from that.
std::vector<GenerationResult> generate_batch(const BatchRequest& request,
                                             const DatasetManifest* manifest, const Model& model,
                                             const ChangeDetector& detector,
                                             const GenerationConfig& config);

}  // namespace anomagic
