#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikegraph/network.hpp"
#include "spikegraph/skeleton.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

/// 45 nm per-operation energies in picojoules.
inline constexpr double kEmacPj = 4.6;
inline constexpr double kEacPj = 0.9;

enum class LayerKind { Conv, Linear, MatmulAttention, Lstm, Bn, Pooling };
std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& text);

/// Which energy term a layer feeds.
enum class CostRole { FirstLayer, Conv, Fc, Ssa, Smic, Excluded };
std::string to_string(CostRole role);
CostRole parse_cost_role(const std::string& text);

/// Shapes for the analytic MAC count (1 MAC = 1 FLOP).
struct LayerShape {
  LayerKind kind = LayerKind::Conv;
  std::size_t cin = 0, cout = 0;
  std::size_t kh = 1, kw = 1;
  std::size_t hout = 1, wout = 1;
  std::size_t groups = 1;
  std::size_t tokens = 0, slices = 1;  // attention: V tokens per slice
  std::size_t steps = 1;               // lstm: recurrent steps
};

/// Conv: Cout*Cin/groups*kh*kw*Hout*Wout; linear: in*out; attention:
/// 2*tokens^2*channels*slices (both products); lstm: steps*4H*(in+H) with
/// cin = in, cout = H; BN and pooling count 0.
double count_flops(const LayerShape& shape);

/// Fraction of ones; throws InvalidInputError for non-binary input.
double measure_firing_rate(const Tensor& spikes);
/// Fraction of nonzero entries; the gating rate for multi-level or real
/// inputs such as block outputs and the fused representation.
double activity_rate(const Tensor& t);

/// r * S * flops. Throws InvalidInputError unless r in [0, 1] and S >= 1.
double compute_sops(double flops, double r, std::size_t spike_steps);

/// E_MAC * flops in millijoules.
double energy_ann(double flops_total);

struct LayerCost {
  std::string id;
  LayerKind kind = LayerKind::Conv;
  CostRole role = CostRole::Conv;
  double flops = 0;
  double rate = 0;
  std::size_t spike_steps = 1;
  double sops = 0;
};

enum class ModelKind { BaseSgn, MkSgn };
std::string to_string(ModelKind kind);

struct EnergyReport {
  std::string model = "mk-sgn";
  ModelKind kind = ModelKind::MkSgn;
  std::size_t n_m = 4;
  std::size_t k = 4;  // modalities entering pairwise estimation
  std::size_t spike_steps = 4;
  std::vector<LayerCost> layers;
  double flops_total = 0;
  double sops_total = 0;
  double energy_mJ = 0;
  std::optional<double> ann_equivalent_mJ;

  /// Recomputes totals from the layer list and the energy model.
  void finalize();
  /// Dense MAC count of the same plan: n_m first layers, k(k-1)/2
  /// estimators and every other layer once.
  double dense_flops() const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Base-SGN: E_MAC*FL1 + E_AC*(conv + fc SOPs). MK-SGN: n_m*E_MAC*FL1 +
/// E_AC*(k(k-1)/2*SMIC + conv + fc + SSA SOPs). Millijoules. Throws
/// InvalidInputError when no layer is tagged as the first layer.
double energy_snn(const EnergyReport& report, ModelKind kind);

/// One inference pass over `calibration`, combining measured input rates
/// with analytic per-sample FLOPs.
EnergyReport profile_model(MkSgnModel& model, const ModalityBatch& calibration);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
