#pragma once

#include <cstdint>

#include "retedit/corpus.hpp"

namespace retedit {

struct SynthOptions {
  int templates = 200;
  int instances = 10;
  std::uint64_t seed = 0;
};

/// Templated (description, code) pairs. Each template fixes a function name,
/// a statement skeleton and helper names; instances fill its slots (argument
/// and variable identifiers, two constants, an operator) and mention every
/// slot value in the description. Descriptions also carry one of a few
/// boilerplate sentences shared by all templates, so word overlap between
/// descriptions is a poor guide to which code is similar.
/// group_key is the template label "tmpl<k>"; ids are "tmpl<k>_<i>".
Dataset synthesize_corpus(const SynthOptions& opts);

/// Slot positions of an instance's output, for tests: true where the token
/// came from a slot rather than from the template.
std::vector<bool> synth_slot_mask(const SynthOptions& opts, int template_index, int instance_index);

}  // namespace retedit
