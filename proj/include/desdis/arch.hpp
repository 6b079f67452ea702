#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "desdis/tensor.hpp"

namespace desdis {

enum class LayerKind { kConv, kFinalConv };
enum class Activation { kRelu, kNone };

/// One convolutional stage. Regular stages are conv + batch norm + ReLU; the
/// final stage is a bare convolution that collapses the remaining spatial
/// extent into the descriptor.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  Index kernel = 3;
  Index stride = 1;
  Index padding = 1;
  Index in_channels = 0;
  Index out_channels = 0;
  bool has_bn = true;
  Activation activation = Activation::kRelu;
};

/// Declarative description of a descriptor network: an ordered layer list
/// mapping a 1×side×side patch to a descriptor_dim vector.
struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  Index input_side = 32;
  Index descriptor_dim = 128;
  int first_layer_width = 0;  // D for the 5-layer family, 0 otherwise
};

/// Architectures by name: "teacher7", "desdis8" | "desdis16" | "desdis24" |
/// "desdis32", "net1" .. "net4". Throws std::invalid_argument for anything
/// else.
NetworkSpec build_spec(const std::string& name);

/// The 5-layer light-weight family; width must be one of {8, 16, 24, 32}.
NetworkSpec build_desdis_spec(int width);

/// The {3,4,5,6}-layer depth variants; variant in 1..4 (3 is the 5-layer
/// width-32 network).
NetworkSpec build_net_variant(int variant);

/// The 7-layer teacher.
NetworkSpec build_teacher7_spec();

/// Exact trainable-parameter count: convolution weight elements, plus 2*C per
/// batch-norm layer when include_bn_affine is set. Running statistics are
/// buffers and never counted.
std::int64_t count_params(const NetworkSpec& spec, bool include_bn_affine = false);

/// Per-layer output side lengths under the conv extent formula. The last
/// entry must be 1; validate_spec checks this along with the stride and
/// final-layer rules.
std::vector<Index> spatial_trace(const NetworkSpec& spec);
void validate_spec(const NetworkSpec& spec);

/// Names of all valid build_spec arguments, for error messages and the CLI.
const std::vector<std::string>& known_arch_names();

}  // namespace desdis
