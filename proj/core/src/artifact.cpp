#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "durastack/detail/bytes.hpp"
#include "durastack/detail/files.hpp"
#include "durastack/errors.hpp"
#include "durastack/random.hpp"
#include "durastack/stack.hpp"

namespace durastack {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

void write_field_model(ByteWriter& w, const FieldModel& m) {
  w.u64(m.field);
  w.u8(m.with_outcome ? 1 : 0);
  w.mat(m.coef);
  w.vec(m.donor_means);
  w.vec(m.donor_values);
}

FieldModel read_field_model(ByteReader& r) {
  FieldModel m;
  m.field = r.u64();
  m.with_outcome = r.u8() != 0;
  m.coef = r.mat();
  m.donor_means = r.vec();
  m.donor_values = r.vec();
  if (m.donor_means.size() != m.donor_values.size()) throw ArtifactError("corrupt model artifact: donor pool sizes differ");
  return m;
}

void write_imputer(ByteWriter& w, const ImputationModelSet& ms) {
  w.u64(ms.stream);
  w.u64(ms.seed);
  w.u64(ms.iterations);
  w.u64(ms.fingerprint);
  w.u64(ms.clusters.size());
  for (const auto& c : ms.clusters) {
    w.str(c.site_id);
    w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(c.year)));
  }
  w.vecx(ms.column_mean);
  w.vecx(ms.column_sd);
  w.f64(ms.outcome_mean);
  w.f64(ms.outcome_sd);
  w.u64(ms.visit_order.size());
  for (auto f : ms.visit_order) w.u64(f);
  w.u64(ms.marginals.size());
  for (const auto& mg : ms.marginals) {
    w.vec(mg.values);
    w.u64(mg.counts.size());
    for (auto c : mg.counts) w.u64(c);
  }
  for (const auto* models : {&ms.primary, &ms.companion}) {
    w.u64(models->size());
    for (const auto& m : *models) write_field_model(w, m);
  }
}

ImputationModelSet read_imputer(ByteReader& r) {
  ImputationModelSet ms;
  ms.stream = r.u64();
  ms.seed = r.u64();
  ms.iterations = r.u64();
  ms.fingerprint = r.u64();
  ms.clusters.resize(r.count(16));
  for (auto& c : ms.clusters) {
    c.site_id = r.str();
    c.year = static_cast<int>(static_cast<std::int64_t>(r.u64()));
  }
  ms.column_mean = r.vecx();
  ms.column_sd = r.vecx();
  ms.outcome_mean = r.f64();
  ms.outcome_sd = r.f64();
  ms.visit_order.resize(r.count(8));
  for (auto& f : ms.visit_order) f = r.u64();
  ms.marginals.resize(r.count(16));
  for (auto& mg : ms.marginals) {
    mg.values = r.vec();
    mg.counts.resize(r.count(8));
    for (auto& c : mg.counts) c = r.u64();
    if (mg.counts.size() != mg.values.size()) throw ArtifactError("corrupt model artifact: marginal sizes differ");
  }
  for (auto* models : {&ms.primary, &ms.companion}) {
    models->resize(r.count(9));
    for (auto& m : *models) m = read_field_model(r);
  }
  if (ms.primary.size() != ms.marginals.size() || ms.companion.size() != ms.marginals.size()) {
    throw ArtifactError("corrupt model artifact: imputation model tables differ in size");
  }
  for (auto f : ms.visit_order) {
    if (f >= ms.primary.size()) throw ArtifactError("corrupt model artifact: visit order names an unknown field");
  }
  return ms;
}

void write_learner(ByteWriter& w, const FittedLearner& f) {
  w.str(f.spec.to_json().dump());
  w.u64(f.fingerprint);
  w.u64(f.width);
  w.u8(static_cast<std::uint8_t>(f.model.index()));
  if (const auto* en = std::get_if<ElasticNetModel>(&f.model)) {
    w.f64(en->intercept);
    w.vecx(en->beta);
    w.u64(en->sweeps);
  } else if (const auto* gam = std::get_if<GamModel>(&f.model)) {
    w.f64(gam->intercept);
    w.u64(gam->linear_columns.size());
    for (auto c : gam->linear_columns) w.u64(c);
    w.vecx(gam->linear_coef);
    w.u64(gam->smooths.size());
    for (const auto& s : gam->smooths) {
      w.u64(s.column);
      w.f64(s.lo);
      w.f64(s.hi);
      w.vec(s.knots);
      w.mat(s.Z);
      w.vecx(s.coef);
    }
  } else {
    const auto& te = std::get<TreeEnsemble>(f.model);
    w.f64(te.base);
    w.f64(te.learning_rate);
    w.u8(te.average ? 1 : 0);
    w.u64(te.trees.size());
    for (const auto& t : te.trees) {
      w.u64(t.nodes.size());
      for (const auto& n : t.nodes) {
        w.u32(n.feature);
        w.u32(n.left);
        w.f64(n.value);
      }
    }
  }
}

FittedLearner read_learner(ByteReader& r) {
  FittedLearner f;
  try {
    f.spec = LearnerSpec::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(fmt::format("corrupt model artifact: bad learner spec ({})", e.what()));
  }
  f.fingerprint = r.u64();
  f.width = r.u64();
  const auto tag = r.u8();
  switch (tag) {
    case 0: {
      ElasticNetModel en;
      en.intercept = r.f64();
      en.beta = r.vecx();
      en.sweeps = r.u64();
      if (static_cast<std::size_t>(en.beta.size()) != f.width) throw ArtifactError("corrupt model artifact: coefficient count");
      f.model = std::move(en);
      break;
    }
    case 1: {
      GamModel gam;
      gam.intercept = r.f64();
      gam.linear_columns.resize(r.count(8));
      for (auto& c : gam.linear_columns) {
        c = r.u64();
        if (c >= f.width) throw ArtifactError("corrupt model artifact: column out of range");
      }
      gam.linear_coef = r.vecx();
      gam.smooths.resize(r.count(8));
      for (auto& s : gam.smooths) {
        s.column = r.u64();
        s.lo = r.f64();
        s.hi = r.f64();
        s.knots = r.vec();
        s.Z = r.mat();
        s.coef = r.vecx();
        if (s.column >= f.width || s.knots.size() < 8 || s.Z.rows() != static_cast<Eigen::Index>(s.basis_size()) ||
            s.Z.cols() != s.coef.size()) {
          throw ArtifactError("corrupt model artifact: malformed smooth term");
        }
      }
      f.model = std::move(gam);
      break;
    }
    case 2: {
      TreeEnsemble te;
      te.base = r.f64();
      te.learning_rate = r.f64();
      te.average = r.u8() != 0;
      te.trees.resize(r.count(8));
      for (auto& t : te.trees) {
        t.nodes.resize(r.count(16));
        for (auto& n : t.nodes) {
          n.feature = r.u32();
          n.left = r.u32();
          n.value = r.f64();
        }
        for (const auto& n : t.nodes) {
          if (n.feature != Tree::kLeaf && (n.feature >= f.width || n.left + 1 >= t.nodes.size())) {
            throw ArtifactError("corrupt model artifact: malformed tree");
          }
        }
        if (t.nodes.empty()) throw ArtifactError("corrupt model artifact: empty tree");
      }
      f.model = std::move(te);
      break;
    }
    default:
      throw ArtifactError(fmt::format("corrupt model artifact: unknown learner tag {}", tag));
  }
  return f;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

nlohmann::json manifest_of(const LockedModel& model, const std::vector<std::pair<std::size_t, std::size_t>>& spans) {
  nlohmann::json j;
  j["format"] = "durastack-model";
  j["format_version"] = model.format_version;
  j["endianness"] = "little";
  j["encoding"] = model.meta.to_json();
  j["encoding_fingerprint"] = hex64(model.meta.fingerprint());
  const auto& p = model.provenance;
  j["provenance"] = {{"seed", p.seed},          {"m", p.m},
                     {"iterations", p.iterations}, {"created", p.created},
                     {"tool_version", p.tool_version}, {"grids", p.grids.is_null() ? nlohmann::json::object() : p.grids},
                     {"training", p.training.is_null() ? nlohmann::json::object() : p.training},
                     {"tune_digest", hex64(p.tune_digest)}};
  auto& pipes = j["pipelines"] = nlohmann::json::array();
  for (std::size_t k = 0; k < model.pipelines.size(); ++k) {
    const auto& pl = model.pipelines[k];
    nlohmann::json learners = nlohmann::json::array();
    for (const auto& l : pl.learners) learners.push_back(l.spec.to_json());
    std::vector<std::string> order, clusters;
    for (auto f : pl.imputer.visit_order) order.push_back(model.meta.fields.at(f).name);
    for (const auto& c : pl.imputer.clusters) clusters.push_back(c.label());
    pipes.push_back({{"index", k},
                     {"weights", pl.weights.w},
                     {"learners", learners},
                     {"imputer", {{"stream", pl.imputer.stream},
                                  {"seed", pl.imputer.seed},
                                  {"iterations", pl.imputer.iterations},
                                  {"visit_order", order},
                                  {"clusters", clusters}}},
                     {"payload", {{"offset", spans[k].first}, {"length", spans[k].second}}}});
  }
  return j;
}

void write_pipeline(ByteWriter& w, const Pipeline& p) {
  write_imputer(w, p.imputer);
  for (const auto& l : p.learners) write_learner(w, l);
  for (double v : p.weights.w) w.f64(v);
}

Pipeline read_pipeline(ByteReader& r) {
  Pipeline p;
  p.imputer = read_imputer(r);
  for (auto& l : p.learners) l = read_learner(r);
  for (auto& v : p.weights.w) v = r.f64();
  return p;
}

struct Sections {
  std::uint32_t version = 0;
  std::string_view manifest;
  std::string_view payload;
};

Sections split_sections(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kArtifactMagic.size() || r.raw(kArtifactMagic.size()) != kArtifactMagic) {
    throw ArtifactError("not a durastack model artifact (bad magic)");
  }
  Sections s;
  s.version = r.u32();
  if (s.version != kArtifactVersion) {
    throw ArtifactError(fmt::format("model artifact format version {} is not supported; this build reads version {}",
                                    s.version, kArtifactVersion));
  }
  s.manifest = r.raw(r.count());
  s.payload = r.raw(r.count());
  const auto body = r.position();
  const auto stored = r.u64();
  if (!r.done()) throw ArtifactError("corrupt model artifact: trailing bytes after checksum");
  if (fnv1a64(bytes.substr(0, body)) != stored) throw ArtifactError("corrupt model artifact: checksum mismatch");
  return s;
}

}  // namespace

std::string serialize(const ImputationModelSet& models) {
  ByteWriter w;
  write_imputer(w, models);
  return w.take();
}

std::string serialize(const FittedLearner& learner) {
  ByteWriter w;
  write_learner(w, learner);
  return w.take();
}

std::string serialize(const LockedModel& model) {
  if (model.pipelines.empty()) throw UsageError("cannot save a model without pipelines");
  ByteWriter payload;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (const auto& p : model.pipelines) {
    check_weights(p.weights);
    const auto start = payload.size();
    write_pipeline(payload, p);
    spans.emplace_back(start, payload.size() - start);
  }
  const std::string manifest = manifest_of(model, spans).dump(1);
  ByteWriter out;
  out.raw(kArtifactMagic);
  out.u32(model.format_version);
  out.str(manifest);
  out.str(payload.bytes());
  out.u64(fnv1a64(out.bytes()));
  return out.take();
}

nlohmann::json read_manifest(std::string_view bytes) {
  const auto s = split_sections(bytes);
  try {
    return nlohmann::json::parse(s.manifest);
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(fmt::format("corrupt model artifact: manifest is not JSON ({})", e.what()));
  }
}

LockedModel deserialize(std::string_view bytes) {
  const auto s = split_sections(bytes);
  LockedModel model;
  model.format_version = s.version;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(s.manifest);
    model.meta = EncodingMeta::from_json(manifest.at("encoding"));
    const auto& p = manifest.at("provenance");
    model.provenance.seed = p.at("seed").get<std::uint64_t>();
    model.provenance.m = p.at("m").get<std::size_t>();
    model.provenance.iterations = p.at("iterations").get<std::size_t>();
    model.provenance.created = p.at("created").get<std::string>();
    model.provenance.tool_version = p.at("tool_version").get<std::string>();
    model.provenance.grids = p.at("grids");
    model.provenance.training = p.at("training");
    model.provenance.tune_digest = std::stoull(p.at("tune_digest").get<std::string>(), nullptr, 16);
    for (const auto& pj : manifest.at("pipelines")) {
      const auto offset = pj.at("payload").at("offset").get<std::size_t>();
      const auto length = pj.at("payload").at("length").get<std::size_t>();
      if (offset > s.payload.size() || length > s.payload.size() - offset) {
        throw ArtifactError("corrupt model artifact: pipeline span outside the payload");
      }
      ByteReader r(s.payload.substr(offset, length));
      model.pipelines.push_back(read_pipeline(r));
      if (!r.done()) throw ArtifactError("corrupt model artifact: pipeline span has trailing bytes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(fmt::format("corrupt model artifact: malformed manifest ({})", e.what()));
  } catch (const std::invalid_argument&) {
    throw ArtifactError("corrupt model artifact: malformed digest");
  }
  if (model.pipelines.empty()) throw ArtifactError("corrupt model artifact: no pipelines");
  const auto fp = model.meta.fingerprint();
  for (const auto& p : model.pipelines) {
    try {
      check_weights(p.weights);
    } catch (const NumericError& e) {
      throw ArtifactError(fmt::format("corrupt model artifact: {}", e.what()));
    }
    if (p.imputer.fingerprint != fp) throw ArtifactError("corrupt model artifact: imputer encoding mismatch");
    for (const auto& l : p.learners) {
      if (l.fingerprint != fp || l.width != model.meta.width()) {
        throw ArtifactError("corrupt model artifact: learner encoding mismatch");
      }
    }
    if (p.imputer.marginals.size() != model.meta.fields.size() ||
        static_cast<std::size_t>(p.imputer.column_mean.size()) != model.meta.width()) {
      throw ArtifactError("corrupt model artifact: imputer does not match the encoding");
    }
  }
  return model;
}

void save(const LockedModel& model, std::ostream& out) {
  const auto bytes = serialize(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed to write model artifact");
}

LockedModel load(std::istream& in) {
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

void save_file(const LockedModel& model, const std::filesystem::path& path) {
  detail::write_file_atomic(path, serialize(model));
}

LockedModel load_file(const std::filesystem::path& path) { return deserialize(detail::read_file(path)); }

std::string digest_hex(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

}  // namespace durastack
