#include "desdis/arch.hpp"

#include <stdexcept>

namespace desdis {

namespace {

LayerSpec conv3(Index in, Index out, Index stride) {
  LayerSpec l;
  l.kind = LayerKind::kConv;
  l.kernel = 3;
  l.stride = stride;
  l.padding = 1;
  l.in_channels = in;
  l.out_channels = out;
  l.has_bn = true;
  l.activation = Activation::kRelu;
  return l;
}

LayerSpec final_conv(Index in, Index out, Index kernel) {
  LayerSpec l;
  l.kind = LayerKind::kFinalConv;
  l.kernel = kernel;
  l.stride = 1;
  l.padding = 0;
  l.in_channels = in;
  l.out_channels = out;
  l.has_bn = false;
  l.activation = Activation::kNone;
  return l;
}

}  // namespace

NetworkSpec build_desdis_spec(int width) {
  if (width != 8 && width != 16 && width != 24 && width != 32) {
    throw std::invalid_argument("desdis width must be 8, 16, 24 or 32, got " +
                                std::to_string(width));
  }
  const Index d = width;
  NetworkSpec spec;
  spec.name = "desdis" + std::to_string(width);
  spec.first_layer_width = width;
  spec.layers = {
      conv3(1, d, 2),
      conv3(d, 2 * d, 2),
      conv3(2 * d, 4 * d, 2),
      conv3(4 * d, 4 * d, 1),
      final_conv(4 * d, 128, 4),
  };
  validate_spec(spec);
  return spec;
}

NetworkSpec build_net_variant(int variant) {
  NetworkSpec spec;
  switch (variant) {
    case 1:
      spec.layers = {conv3(1, 32, 2), conv3(32, 64, 2), final_conv(64, 128, 8)};
      break;
    case 2:
      spec.layers = {conv3(1, 32, 2), conv3(32, 64, 2), conv3(64, 128, 2),
                     final_conv(128, 128, 4)};
      break;
    case 3:
      return build_desdis_spec(32);
    case 4:
      spec.layers = {conv3(1, 32, 2),   conv3(32, 64, 2),   conv3(64, 64, 1),
                     conv3(64, 128, 2), conv3(128, 128, 1), final_conv(128, 128, 4)};
      break;
    default:
      throw std::invalid_argument("net variant must be in 1..4, got " + std::to_string(variant));
  }
  spec.name = "net" + std::to_string(variant);
  validate_spec(spec);
  return spec;
}

NetworkSpec build_teacher7_spec() {
  NetworkSpec spec;
  spec.name = "teacher7";
  spec.layers = {
      conv3(1, 32, 1),  conv3(32, 32, 1),   conv3(32, 64, 2),        conv3(64, 64, 1),
      conv3(64, 128, 2), conv3(128, 128, 1), final_conv(128, 128, 8),
  };
  validate_spec(spec);
  return spec;
}

NetworkSpec build_spec(const std::string& name) {
  if (name == "teacher7") return build_teacher7_spec();
  if (name == "desdis8") return build_desdis_spec(8);
  if (name == "desdis16") return build_desdis_spec(16);
  if (name == "desdis24") return build_desdis_spec(24);
  if (name == "desdis32") return build_desdis_spec(32);
  if (name == "net1") return build_net_variant(1);
  if (name == "net2") return build_net_variant(2);
  if (name == "net3") return build_net_variant(3);
  if (name == "net4") return build_net_variant(4);
  std::string known;
  for (const auto& n : known_arch_names()) {
    if (!known.empty()) known += ", ";
    known += n;
  }
  throw std::invalid_argument("unknown architecture '" + name + "'; known: " + known);
}

const std::vector<std::string>& known_arch_names() {
  static const std::vector<std::string> names = {
      "teacher7", "desdis8", "desdis16", "desdis24", "desdis32",
      "net1",     "net2",    "net3",     "net4",
  };
  return names;
}

std::int64_t count_params(const NetworkSpec& spec, bool include_bn_affine) {
  std::int64_t total = 0;
  for (const auto& l : spec.layers) {
    total += static_cast<std::int64_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
    if (include_bn_affine && l.has_bn) total += 2 * static_cast<std::int64_t>(l.out_channels);
  }
  return total;
}

std::vector<Index> spatial_trace(const NetworkSpec& spec) {
  std::vector<Index> sides;
  Index side = spec.input_side;
  for (const auto& l : spec.layers) {
    if (side + 2 * l.padding < l.kernel) {
      throw std::invalid_argument("layer kernel " + std::to_string(l.kernel) +
                                  " does not fit side " + std::to_string(side));
    }
    side = (side + 2 * l.padding - l.kernel) / l.stride + 1;
    sides.push_back(side);
  }
  return sides;
}

void validate_spec(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw std::invalid_argument("network spec has no layers");
  Index channels = 1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.stride != 1 && l.stride != 2) {
      throw std::invalid_argument("layer stride must be 1 or 2");
    }
    if (l.in_channels != channels) {
      throw std::invalid_argument("layer " + std::to_string(i) + " expects " +
                                  std::to_string(l.in_channels) + " input channels, chain has " +
                                  std::to_string(channels));
    }
    channels = l.out_channels;
    const bool is_last = i + 1 == spec.layers.size();
    if (l.kind == LayerKind::kFinalConv) {
      if (!is_last) throw std::invalid_argument("final_conv must be the last layer");
      if (l.has_bn || l.activation != Activation::kNone) {
        throw std::invalid_argument("final_conv carries no batch norm or activation");
      }
    } else if (is_last) {
      throw std::invalid_argument("last layer must be a final_conv");
    }
  }
  if (channels != spec.descriptor_dim) {
    throw std::invalid_argument("final layer emits " + std::to_string(channels) +
                                " channels, spec wants " +
                                std::to_string(spec.descriptor_dim));
  }
  const auto sides = spatial_trace(spec);
  // Every spec must collapse to exactly 1×1; silent truncation along the way
  // would desynchronize the parameter accounting from the tensor shapes.
  if (sides.back() != 1) {
    throw std::invalid_argument("spec does not reduce the input to 1x1 (final side " +
                                std::to_string(sides.back()) + ")");
  }
}

}  // namespace desdis
