#include "jens/ensemble.hpp"

#include <cmath>
#include <numeric>

#include "jens/binio.hpp"
#include "jens/parallel.hpp"
#include "json.hpp"

namespace jens {

const char* aggregation_name(Aggregation a) {
  return a == Aggregation::kLogitMean ? "logit_mean" : "prob_mean";
}

const char* method_name(EnsembleMethod m) {
  switch (m) {
    case EnsembleMethod::kSingle: return "single";
    case EnsembleMethod::kBagging: return "bagging";
    case EnsembleMethod::kSnapshot: return "snapshot";
    case EnsembleMethod::kSoftvote: return "softvote";
  }
  return "?";
}

Aggregation parse_aggregation(const std::string& name) {
  if (name == "logit_mean") return Aggregation::kLogitMean;
  if (name == "prob_mean") return Aggregation::kProbMean;
  throw std::invalid_argument("unknown aggregation '" + name + "'");
}

EnsembleMethod parse_method(const std::string& name) {
  for (auto m : {EnsembleMethod::kSingle, EnsembleMethod::kBagging, EnsembleMethod::kSnapshot,
                 EnsembleMethod::kSoftvote}) {
    if (name == method_name(m)) return m;
  }
  throw std::invalid_argument("unknown ensemble method '" + name + "'");
}

Aggregation default_aggregation(EnsembleMethod m) {
  return m == EnsembleMethod::kSoftvote ? Aggregation::kProbMean : Aggregation::kLogitMean;
}

Ensemble Ensemble::single(ModelParams model) {
  return uniform({std::move(model)}, EnsembleMethod::kSingle, Aggregation::kLogitMean);
}

Ensemble Ensemble::uniform(std::vector<ModelParams> members, EnsembleMethod method,
                           Aggregation aggregation) {
  if (members.empty()) throw std::invalid_argument("ensemble needs at least one member");
  Ensemble e;
  e.method = method;
  e.aggregation = aggregation;
  e.weights.assign(members.size(), 1.0 / static_cast<double>(members.size()));
  e.members = std::move(members);
  e.validate();
  return e;
}

void Ensemble::validate() const {
  if (members.empty()) throw std::invalid_argument("ensemble needs at least one member");
  if (weights.size() != members.size()) {
    throw std::invalid_argument("ensemble has " + std::to_string(weights.size()) +
                                " weights for " + std::to_string(members.size()) + " members");
  }
  double total = 0.0;
  for (double c : weights) {
    if (!(c > 0.0 && c <= 1.0)) throw std::invalid_argument("ensemble weights must lie in (0, 1]");
    if (c == 1.0 && members.size() > 1) {
      throw std::invalid_argument("weight 1 is only allowed for a single-member ensemble");
    }
    total += c;
  }
  if (std::abs(total - 1.0) > kWeightTolerance) {
    throw std::invalid_argument("ensemble weights must sum to 1");
  }
  for (const auto& m : members) {
    m.validate();
    if (m.input_dim() != members.front().input_dim() || m.classes() != members.front().classes()) {
      throw ShapeError("ensemble members disagree on input or class count");
    }
  }
}

double sum_sq(std::span<const double> weights) {
  double s = 0.0;
  for (double c : weights) s += c * c;
  return s;
}

BoundEnsemble bind_ensemble(ad::Graph& graph, const Ensemble& ensemble) {
  ensemble.validate();
  BoundEnsemble out;
  out.aggregation = ensemble.aggregation;
  out.weights = ensemble.weights;
  for (const auto& m : ensemble.members) out.members.push_back(bind_params(graph, m, false));
  return out;
}

ad::Var ensemble_forward(const BoundEnsemble& ensemble, ad::Var x) {
  ad::Var total;
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    auto out = forward_logits(ensemble.members[i], x);
    if (ensemble.aggregation == Aggregation::kProbMean) out = ad::exp(ad::log_softmax(out));
    auto term = ad::scale(out, ensemble.weights[i]);
    total = i == 0 ? term : ad::add(total, term);
  }
  return total;
}

ad::Var ensemble_log_probs(const BoundEnsemble& ensemble, ad::Var x) {
  auto out = ensemble_forward(ensemble, x);
  return ensemble.aggregation == Aggregation::kLogitMean ? ad::log_softmax(out) : ad::log(out);
}

Tensor ensemble_forward(const Ensemble& ensemble, const Tensor& batch) {
  ensemble.validate();
  std::vector<double> acc;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    auto logits = forward_logits(ensemble.members[i], batch);
    if (ensemble.aggregation == Aggregation::kProbMean) {
      ad::Graph g;
      logits = ad::exp(ad::log_softmax(g.constant(logits))).value();
    }
    if (acc.empty()) acc.assign(logits.size(), 0.0);
    auto v = logits.data();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += ensemble.weights[i] * v[k];
  }
  return Tensor({batch.dim(0), ensemble.classes()}, std::move(acc));
}

std::vector<std::size_t> predict(const Ensemble& ensemble, const Tensor& batch) {
  return argmax_rows(ensemble_forward(ensemble, batch));
}

Tensor ensemble_jacobian(const Ensemble& ensemble, const Tensor& x) {
  if (ensemble.aggregation != Aggregation::kLogitMean) {
    throw UnsupportedModeError("ensemble_jacobian is only defined for logit_mean aggregation");
  }
  if (x.size() != ensemble.input_dim()) throw ShapeError("ensemble_jacobian: input size mismatch");
  ad::Graph g;
  auto bound = bind_ensemble(g, ensemble);
  auto xv = g.leaf(x.reshaped({1, x.size()}));
  auto rows = ad::jacobian_rows(ensemble_forward(bound, xv), xv);
  return ad::concat0(rows).value();
}

namespace {

void require_members(std::size_t m) {
  if (m < 1) throw std::invalid_argument("an ensemble needs at least one member");
}

}  // namespace

Ensemble build_single(const Dataset& ds, const ArchSpec& spec, const TrainConfig& cfg,
                      std::uint64_t seed, RecordSink records) {
  auto member_cfg = cfg;
  member_cfg.seed = seed;
  auto result = train(spec, ds, member_cfg);
  if (records) records->assign(1, result.record);
  return Ensemble::single(std::move(result.model));
}

Ensemble build_bagging(const Dataset& ds, const ArchSpec& spec, const TrainConfig& base_cfg,
                       std::size_t members, std::uint64_t seed, std::size_t jobs,
                       RecordSink records) {
  require_members(members);
  std::vector<ModelParams> trained(members);
  std::vector<TrainRecord> logs(members);
  parallel_for(members, jobs, [&](std::size_t i) {
    auto cfg = base_cfg;
    cfg.seed = seed + i;
    const auto sample = bootstrap_resample(ds, derive_seed(seed + i, 0xb007));
    auto result = train(spec, sample, cfg);
    trained[i] = std::move(result.model);
    logs[i] = std::move(result.record);
  });
  if (records) *records = std::move(logs);
  return Ensemble::uniform(std::move(trained), EnsembleMethod::kBagging, Aggregation::kLogitMean);
}

Ensemble build_snapshot(const Dataset& ds, const ArchSpec& spec, const TrainConfig& base_cfg,
                        std::size_t members, std::uint64_t seed, RecordSink records) {
  require_members(members);
  auto cfg = base_cfg;
  cfg.schedule = LrSchedule::kCyclicCosine;
  cfg.cycles = members;
  cfg.seed = seed;
  auto result = train(spec, ds, cfg);
  if (result.snapshots.size() != members) {
    throw std::logic_error("snapshot run produced " + std::to_string(result.snapshots.size()) +
                           " snapshots for " + std::to_string(members) + " cycles");
  }
  if (records) records->assign(1, result.record);
  return Ensemble::uniform(std::move(result.snapshots), EnsembleMethod::kSnapshot,
                           Aggregation::kLogitMean);
}

Ensemble build_softvote(const Dataset& ds, const ArchSpec& spec, const TrainConfig& base_cfg,
                        std::size_t members, std::uint64_t seed, std::size_t jobs,
                        RecordSink records) {
  require_members(members);
  std::vector<ModelParams> trained(members);
  std::vector<TrainRecord> logs(members);
  parallel_for(members, jobs, [&](std::size_t i) {
    auto cfg = base_cfg;
    cfg.seed = seed + i;
    auto result = train(spec, ds, cfg);
    trained[i] = std::move(result.model);
    logs[i] = std::move(result.record);
  });
  if (records) *records = std::move(logs);
  return Ensemble::uniform(std::move(trained), EnsembleMethod::kSoftvote, Aggregation::kProbMean);
}

Ensemble build_ensemble(EnsembleMethod method, const Dataset& ds, const ArchSpec& spec,
                        const TrainConfig& base_cfg, std::size_t members, std::uint64_t seed,
                        std::size_t jobs, RecordSink records) {
  switch (method) {
    case EnsembleMethod::kSingle:
      if (members != 1) throw std::invalid_argument("method 'single' takes exactly one learner");
      return build_single(ds, spec, base_cfg, seed, records);
    case EnsembleMethod::kBagging:
      return build_bagging(ds, spec, base_cfg, members, seed, jobs, records);
    case EnsembleMethod::kSnapshot:
      return build_snapshot(ds, spec, base_cfg, members, seed, records);
    case EnsembleMethod::kSoftvote:
      return build_softvote(ds, spec, base_cfg, members, seed, jobs, records);
  }
  throw std::invalid_argument("unknown ensemble method");
}

void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir,
                   const std::map<std::string, std::string>& provenance) {
  ensemble.validate();
  nlohmann::ordered_json manifest;
  manifest["format"] = "jens-ensemble";
  manifest["version"] = 1;
  manifest["method"] = method_name(ensemble.method);
  manifest["aggregation"] = aggregation_name(ensemble.aggregation);
  manifest["M"] = ensemble.size();
  manifest["weights"] = ensemble.weights;
  std::vector<std::string> files;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    files.push_back("member_" + std::to_string(i) + ".jmdl");
    save_model(ensemble.members[i], dir / files.back());
  }
  manifest["members"] = files;
  if (!provenance.empty()) manifest["provenance"] = provenance;
  binio::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Ensemble load_ensemble(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(binio::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw binio::FormatError("ensemble manifest: " + std::string(e.what()));
  }
  try {
    if (manifest.at("format") != "jens-ensemble" || manifest.at("version") != 1) {
      throw binio::FormatError("unsupported ensemble manifest");
    }
    Ensemble e;
    e.method = parse_method(manifest.at("method"));
    e.aggregation = parse_aggregation(manifest.at("aggregation"));
    e.weights = manifest.at("weights").get<std::vector<double>>();
    for (const auto& name : manifest.at("members")) {
      e.members.push_back(load_model(dir / name.get<std::string>()));
    }
    if (manifest.at("M").get<std::size_t>() != e.members.size()) {
      throw binio::FormatError("manifest M does not match member list");
    }
    e.validate();
    return e;
  } catch (const nlohmann::json::exception& e) {
    throw binio::FormatError("ensemble manifest: " + std::string(e.what()));
  }
}

}  // namespace jens
