// SPDX-License-Identifier: Apache-2.0
#include "centerlens/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "centerlens/bench.hpp"
#include "centerlens/decomp.hpp"
#include "centerlens/encoder.hpp"
#include "centerlens/error.hpp"
#include "centerlens/fixture.hpp"
#include "centerlens/gridgen.hpp"
#include "centerlens/interventions.hpp"
#include "centerlens/parallel.hpp"
#include "centerlens/tensorio.hpp"
#include "json.hpp"

namespace centerlens::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kSynopsis = R"(Synopsis:
  generate   --sources DIR --out DIR [--k 7] [--patch-px 32] [--s 1] [--seed N] [--per-class 100] [--background SPEC]
  encode     --weights W.cblt (--image PNG... | --manifest M.jsonl) --out E.cblt [--pooling cls|mean] [--attention A.cblt]
  attn-map   --weights W.cblt --image PNG --out MAP.png [--layer -1] [--head H] [--token 0] [--radius 1] [--csv MAP.csv] [--redistribute]
  intervene  --mode ar|vp|meanpool (--image PNG... | --manifest M.jsonl) [--weights W.cblt --out E.cblt] [--detections D.json | --grid-k K]
  decompose  --concepts C.cblt (--embeddings E.cblt | --weights W.cblt --image PNG) [--lambda 0.2] [--top 10] [--out OUT.json|.csv]
             [--center-sample ID --offcenter-sample ID --targets A,B [--tau 1e-4]]
  bench      --weights W.cblt --manifest M.jsonl --classes C.cblt --variant baseline|ar|vp|meanpool --out R.json
             [--baseline R0.json] [--grid-k K] [--detections D.json] [--samples-csv F] [--cells-csv F] [--heatmap F.png]
  report     R.json... [--baseline R0.json] [--out TABLE.txt] [--json-out ALL.json]
  fixture    --out DIR [--seed 7] [--images-per-class 10] [--patch-px 8] [--k 7]
Common: --jobs N (default: $CENTERLENS_JOBS, else 1). Exit codes: 0 ok, 1 usage error, 2 data error.)";

// Resolved-config record written to stderr before a subcommand runs.
void log_config(std::ostream& err, const CLI::App& sub, const std::map<std::string, fs::path>& paths, int jobs) {
  ordered_json j;
  j["subcommand"] = sub.get_name();
  ordered_json flags = ordered_json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help" || opt->get_lnames().empty()) {
      if (opt->get_name() != "reports") continue;
    }
    const std::string key = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
    if (opt->count() > 0) {
      const auto& res = opt->results();
      if (res.size() == 1) {
        flags[key] = res.front();
      } else {
        flags[key] = res;
      }
    } else if (opt->get_expected_max() == 0) {
      flags[key] = false;
    } else if (!opt->get_default_str().empty()) {
      flags[key] = opt->get_default_str();
    } else {
      flags[key] = nullptr;
    }
  }
  j["flags"] = flags;
  ordered_json resolved = ordered_json::object();
  for (const auto& [name, p] : paths) {
    if (!p.empty()) resolved[name] = fs::absolute(p).lexically_normal().string();
  }
  j["paths"] = resolved;
  j["jobs"] = jobs;
  err << "centerlens: config " << j.dump() << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

bool has_extension(const fs::path& p, const std::string& ext) { return p.extension() == ext; }

struct NamedImage {
  std::string id;
  fs::path path;
};

// Inputs from --image paths or from a manifest (ids are sample ids).
std::vector<NamedImage> collect_images(const std::vector<std::string>& images, const fs::path& manifest) {
  if (!images.empty() && !manifest.empty()) throw InvalidArgument("give either --image or --manifest, not both");
  std::vector<NamedImage> out;
  if (!manifest.empty()) {
    const auto entries = tensorio::read_manifest(manifest);
    for (const auto& e : entries) out.push_back({e.sample_id, manifest.parent_path() / e.image_path});
  } else {
    for (const auto& p : images) out.push_back({p, p});
  }
  if (out.empty()) throw InvalidArgument("no input images (use --image or --manifest)");
  return out;
}

// `embeddings` [n, d_out] with the input ids in the names sidecar.
void save_embeddings(const std::vector<std::string>& ids, const std::vector<vit::EmbeddingVector>& embs,
                     const fs::path& out) {
  if (embs.empty()) throw InvalidArgument("nothing to write");
  const auto d = static_cast<std::int64_t>(embs.front().values.size());
  std::vector<float> data;
  data.reserve(embs.size() * static_cast<std::size_t>(d));
  for (const auto& e : embs) data.insert(data.end(), e.values.begin(), e.values.end());
  tensorio::TensorBundle bundle;
  bundle.add("embeddings", {static_cast<std::int64_t>(embs.size()), d}, std::move(data));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  tensorio::write_bundle_file(bundle, out);
  tensorio::write_names(ids, tensorio::names_sidecar_path(out));
}

struct EmbeddingTable {
  std::vector<std::string> ids;
  vit::Matrix rows;
};

EmbeddingTable load_embeddings(const fs::path& path) {
  const auto bundle = tensorio::read_bundle_file(path);
  const auto& t = bundle.get("embeddings");
  if (t.shape.size() != 2) throw DataError(path.string() + ": embeddings must be 2-D");
  EmbeddingTable table;
  table.ids = tensorio::read_names(tensorio::names_sidecar_path(path));
  if (static_cast<std::int64_t>(table.ids.size()) != t.shape[0]) {
    throw DataError(path.string() + ": names sidecar has " + std::to_string(table.ids.size()) + " ids for " +
                    std::to_string(t.shape[0]) + " rows");
  }
  table.rows = vit::Matrix(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]));
  table.rows.data = t.data;
  return table;
}

vit::WeightBundle load_weights(const fs::path& path) {
  return vit::WeightBundle::from_bundle(tensorio::read_bundle_file(path));
}

intervene::PromptShape parse_shape(const std::string& s) {
  if (s == "box") return intervene::PromptShape::kBox;
  if (s == "circle") return intervene::PromptShape::kCircle;
  throw InvalidArgument("unknown prompt shape '" + s + "'");
}

fs::path vp_path(const fs::path& original) {
  fs::path p = original;
  p.replace_extension(".vp.png");
  return p;
}

// Flags shared by subcommands that draw prompts or edit attention.
struct PromptFlags {
  std::string shape = "box";
  int stroke = 2;
  int pad = 2;
  std::vector<float> color{1.0f, 0.0f, 0.0f};

  void add(CLI::App* sub) {
    sub->add_option("--shape", shape, "Prompt shape")->check(CLI::IsMember({"box", "circle"}))->capture_default_str();
    sub->add_option("--stroke", stroke, "Prompt stroke width in pixels")->capture_default_str();
    sub->add_option("--pad", pad, "Gap between box and stroke in pixels")->capture_default_str();
    sub->add_option("--color", color, "Prompt color as three values in [0,1]")->expected(3);
  }
  intervene::PromptStyle style() const {
    intervene::PromptStyle st;
    st.shape = parse_shape(shape);
    st.stroke_px = stroke;
    st.pad_px = pad;
    if (color.size() != 3) throw InvalidArgument("--color takes three values");
    st.color = {color[0], color[1], color[2]};
    st.validate();
    return st;
  }
};

struct RedistFlags {
  int layers_from_end = 1;
  bool uniform_fallback = false;

  void add(CLI::App* sub) {
    sub->add_option("--layers-from-end", layers_from_end, "Trailing layers whose [CLS] rows are redistributed")
        ->capture_default_str();
    sub->add_flag("--uniform-fallback", uniform_fallback, "Spread degenerate [CLS] rows uniformly instead of failing");
  }
  intervene::RedistributionConfig config() const {
    if (layers_from_end < 1) throw InvalidArgument("--layers-from-end must be >= 1");
    intervene::RedistributionConfig c;
    c.layers_from_end = layers_from_end;
    c.row.uniform_fallback = uniform_fallback;
    return c;
  }
};

// Detections for vp: an explicit file, or GRID ground truth.
std::vector<intervene::DetectionBox> boxes_for(const std::string& id, const Image& img,
                                               const std::map<std::string, std::vector<intervene::DetectionBox>>& dets,
                                               const tensorio::ManifestEntry* entry, int grid_k) {
  if (auto it = dets.find(id); it != dets.end()) {
    std::vector<intervene::DetectionBox> out;
    for (const auto& b : it->second) out.push_back(intervene::clamp_box(b, img.width(), img.height()));
    return out;
  }
  if (grid_k > 0 && entry && entry->cell_row >= 0) {
    return {intervene::grid_object_box(entry->cell_row, entry->cell_col, entry->object_size_s, img.width() / grid_k)};
  }
  return {};
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"centerlens: center-bias analysis for [CLS]-pooled vision encoders", "centerlens"};
  app.footer(kSynopsis);
  app.require_subcommand(1);
  app.fallthrough(false);

  int jobs_flag = 0;
  auto add_jobs = [&](CLI::App* sub) {
    sub->add_option("--jobs", jobs_flag, "Worker threads (default: $CENTERLENS_JOBS, else 1)");
  };

  std::function<int()> action;
  std::map<std::string, fs::path> paths;

  // generate
  grid::GridSpec gspec;
  gspec.seed = 0;
  fs::path g_sources, g_out;
  int g_per_class = 100;
  std::string g_background = "noise";
  auto* gen = app.add_subcommand("generate", "Build a GRID dataset (images + manifest.jsonl)");
  gen->add_option("--sources", g_sources, "Source images: DIR/<class>/*.png or DIR/<set>/<class>/*.png")->required();
  gen->add_option("--out", g_out, "Output directory")->required();
  gen->add_option("--k", gspec.k, "Grid side in cells (odd, >= 5)")->capture_default_str();
  gen->add_option("--patch-px", gspec.patch_px, "Cell side in pixels")->capture_default_str();
  gen->add_option("--s", gspec.s, "Object side in cells (odd, <= k-2)")->capture_default_str();
  gen->add_option("--seed", gspec.seed, "Random seed")->capture_default_str();
  gen->add_option("--per-class", g_per_class, "Source images taken per class and set")->capture_default_str();
  gen->add_option("--background", g_background, "solid[:v] | checker[:p] | stripes[:p] | noise[:amp] | image:PATH")
      ->capture_default_str();
  add_jobs(gen);
  gen->callback([&] {
    action = [&] {
      paths = {{"sources", g_sources}, {"out", g_out}};
      const int jobs = resolve_jobs(jobs_flag);
      log_config(err, *gen, paths, jobs);
      gspec.background = grid::parse_background(g_background);
      gspec.validate();
      if (g_per_class < 1) throw InvalidArgument("--per-class must be >= 1");
      const auto sources = grid::load_sources(g_sources, g_per_class);
      const auto entries = grid::generate_dataset(sources, gspec, g_out, {jobs, true});
      out << "wrote " << entries.size() << " samples to " << (g_out / "manifest.jsonl").string() << "\n";
      return kExitOk;
    };
  });

  // encode
  fs::path e_weights, e_manifest, e_out, e_attention;
  std::vector<std::string> e_images;
  std::string e_pooling = "cls";
  auto* enc = app.add_subcommand("encode", "Embed images with a weight bundle");
  enc->add_option("--weights", e_weights, "Weight bundle (.cblt)")->required();
  enc->add_option("--image", e_images, "Input PNG (repeatable)");
  enc->add_option("--manifest", e_manifest, "Manifest whose images are embedded");
  enc->add_option("--out", e_out, "Embedding bundle to write")->required();
  enc->add_option("--pooling", e_pooling, "Embedding readout")->check(CLI::IsMember({"cls", "mean"}))->capture_default_str();
  enc->add_option("--attention", e_attention, "Also write attention probabilities (single image only)");
  add_jobs(enc);
  enc->callback([&] {
    action = [&] {
      paths = {{"weights", e_weights}, {"manifest", e_manifest}, {"out", e_out}, {"attention", e_attention}};
      const int jobs = resolve_jobs(jobs_flag);
      log_config(err, *enc, paths, jobs);
      const auto inputs = collect_images(e_images, e_manifest);
      if (!e_attention.empty() && inputs.size() != 1) throw InvalidArgument("--attention needs exactly one image");
      const auto w = load_weights(e_weights);
      std::vector<Image> images(inputs.size());
      parallel_for(inputs.size(), jobs, [&](std::size_t i) { images[i] = read_png(inputs[i].path); });
      vit::ForwardOptions opts;
      opts.pooling = e_pooling == "mean" ? vit::Pooling::kMeanPatches : vit::Pooling::kCls;
      opts.capture_attention = !e_attention.empty();
      const auto results = vit::forward_batch(images, w, opts, jobs);
      std::vector<std::string> ids;
      std::vector<vit::EmbeddingVector> embs;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        ids.push_back(inputs[i].id);
        embs.push_back(results[i].embedding);
      }
      save_embeddings(ids, embs, e_out);
      if (!e_attention.empty()) tensorio::write_bundle_file(vit::attention_to_bundle(*results[0].attention), e_attention);
      out << "wrote " << embs.size() << " embeddings to " << e_out.string() << "\n";
      return kExitOk;
    };
  });

  // attn-map
  fs::path a_weights, a_image, a_out, a_csv;
  int a_layer = -1, a_head = -1, a_token = 0, a_radius = 1;
  bool a_redistribute = false;
  RedistFlags a_redist;
  auto* amap = app.add_subcommand("attn-map", "Render one token's attention over the patch grid");
  amap->add_option("--weights", a_weights, "Weight bundle (.cblt)")->required();
  amap->add_option("--image", a_image, "Input PNG")->required();
  amap->add_option("--out", a_out, "Grayscale heatmap PNG")->required();
  amap->add_option("--csv", a_csv, "Also write the map as CSV");
  amap->add_option("--layer", a_layer, "Layer index; negative counts from the end")->capture_default_str();
  amap->add_option("--head", a_head, "Head index; -1 averages heads")->capture_default_str();
  amap->add_option("--token", a_token, "Query token (0 is [CLS])")->capture_default_str();
  amap->add_option("--radius", a_radius, "Chebyshev radius for the reported center mass")->capture_default_str();
  amap->add_flag("--redistribute", a_redistribute, "Apply [CLS] attention redistribution first");
  a_redist.add(amap);
  add_jobs(amap);
  amap->callback([&] {
    action = [&] {
      paths = {{"weights", a_weights}, {"image", a_image}, {"out", a_out}, {"csv", a_csv}};
      log_config(err, *amap, paths, resolve_jobs(jobs_flag));
      const auto w = load_weights(a_weights);
      vit::ForwardOptions opts;
      opts.capture_attention = true;
      if (a_redistribute) opts.edit = intervene::redistribution_editor(w, a_redist.config());
      const auto res = vit::forward(read_png(a_image), w, opts);
      const int layers = static_cast<int>(w.layers.size());
      const int layer = a_layer < 0 ? layers + a_layer : a_layer;
      if (layer < 0 || layer >= layers) throw InvalidArgument("--layer out of range");
      if (a_head < -1 || a_head >= w.num_heads) throw InvalidArgument("--head out of range");
      if (a_token < 0 || a_token >= w.num_tokens()) throw InvalidArgument("--token out of range");
      const auto map = vit::attention_map(*res.attention, layer, a_token,
                                          a_head < 0 ? vit::HeadSelect{} : vit::HeadSelect{a_head});
      write_gray_png(map.values, map.side, map.side, a_out);
      if (!a_csv.empty()) {
        std::ostringstream os;
        os.precision(9);
        for (int r = 0; r < map.side; ++r)
          for (int c = 0; c < map.side; ++c) os << map.at(r, c) << (c + 1 < map.side ? "," : "\n");
        write_text(a_csv, os.str());
      }
      ordered_json j;
      j["layer"] = layer;
      j["head"] = a_head < 0 ? ordered_json(nullptr) : ordered_json(a_head);
      j["token"] = a_token;
      j["cls_self"] = a_token == 0 && a_head >= 0 ? ordered_json(res.attention->at(layer, a_head, 0, 0))
                                                   : ordered_json(nullptr);
      j["radius"] = a_radius;
      j["center_mass"] = vit::center_mass(map, a_radius);
      out << j.dump(2) << "\n";
      return kExitOk;
    };
  });

  // intervene
  std::string i_mode;
  fs::path i_weights, i_manifest, i_out, i_detections;
  std::vector<std::string> i_images;
  int i_grid_k = 0;
  PromptFlags i_prompt;
  RedistFlags i_redist;
  auto* itv = app.add_subcommand("intervene", "Apply a mitigation: attention redistribution, visual prompts, mean pooling");
  itv->add_option("--mode", i_mode, "Mitigation")->required()->check(CLI::IsMember({"ar", "vp", "meanpool"}));
  itv->add_option("--weights", i_weights, "Weight bundle (required for ar and meanpool)");
  itv->add_option("--image", i_images, "Input PNG (repeatable)");
  itv->add_option("--manifest", i_manifest, "Manifest whose images are processed");
  itv->add_option("--out", i_out, "Embedding bundle to write");
  itv->add_option("--detections", i_detections, "Detections JSON for vp");
  itv->add_option("--grid-k", i_grid_k, "GRID side; vp boxes come from manifest anchors");
  i_prompt.add(itv);
  i_redist.add(itv);
  add_jobs(itv);
  itv->callback([&] {
    action = [&] {
      paths = {{"weights", i_weights}, {"manifest", i_manifest}, {"out", i_out}, {"detections", i_detections}};
      const int jobs = resolve_jobs(jobs_flag);
      log_config(err, *itv, paths, jobs);
      const auto inputs = collect_images(i_images, i_manifest);
      const bool embed = !i_weights.empty();
      if (i_mode != "vp" && !embed) throw InvalidArgument("--mode " + i_mode + " needs --weights");
      if (embed && i_out.empty()) throw InvalidArgument("--out is required when embedding");

      std::map<std::string, tensorio::ManifestEntry> entries;
      if (!i_manifest.empty()) {
        for (auto& e : tensorio::read_manifest(i_manifest)) entries.emplace(e.sample_id, e);
      }
      std::map<std::string, std::vector<intervene::DetectionBox>> dets;
      if (!i_detections.empty()) {
        for (auto& d : intervene::load_detections(i_detections)) dets[d.image_id] = std::move(d.boxes);
      }
      if (i_mode == "vp" && dets.empty() && (i_grid_k <= 0 || entries.empty())) {
        throw InvalidArgument("vp needs --detections, or --manifest with --grid-k");
      }
      const auto style = i_mode == "vp" ? i_prompt.style() : intervene::PromptStyle{};

      std::optional<vit::WeightBundle> w;
      if (embed) w = load_weights(i_weights);
      vit::ForwardOptions opts;
      if (i_mode == "ar") opts.edit = intervene::redistribution_editor(*w, i_redist.config());
      if (i_mode == "meanpool") opts.pooling = vit::Pooling::kMeanPatches;

      std::vector<vit::EmbeddingVector> embs(inputs.size());
      parallel_for(inputs.size(), jobs, [&](std::size_t i) {
        Image img = read_png(inputs[i].path);
        if (i_mode == "vp") {
          const auto it = entries.find(inputs[i].id);
          const auto boxes = boxes_for(inputs[i].id, img, dets, it == entries.end() ? nullptr : &it->second, i_grid_k);
          img = intervene::overlay_prompts(img, boxes, style);
          write_png(img, vp_path(inputs[i].path));
        }
        if (w) embs[i] = vit::forward(img, *w, opts).embedding;
      });
      if (embed) {
        std::vector<std::string> ids;
        for (const auto& in : inputs) ids.push_back(in.id);
        save_embeddings(ids, embs, i_out);
        out << "wrote " << embs.size() << " embeddings to " << i_out.string() << "\n";
      }
      if (i_mode == "vp") out << "wrote " << inputs.size() << " prompted images (.vp.png)\n";
      return kExitOk;
    };
  });

  // decompose
  fs::path d_concepts, d_embeddings, d_weights, d_image, d_out;
  double d_lambda = decomp::kDefaultLambda;
  double d_tau = decomp::kDefaultVanishTau;
  int d_top = 10;
  std::vector<std::string> d_samples, d_targets;
  std::string d_center, d_offcenter;
  auto* dec = app.add_subcommand("decompose", "Sparse non-negative concept decomposition of embeddings");
  dec->add_option("--concepts", d_concepts, "Concept dictionary bundle (.cblt)")->required();
  dec->add_option("--embeddings", d_embeddings, "Embedding bundle from encode/intervene");
  dec->add_option("--weights", d_weights, "Weight bundle, to embed --image directly");
  dec->add_option("--image", d_image, "Input PNG (with --weights)");
  dec->add_option("--sample", d_samples, "Only these ids from --embeddings (repeatable)");
  dec->add_option("--lambda", d_lambda, "L1 penalty")->capture_default_str();
  dec->add_option("--top", d_top, "Concepts listed per embedding")->capture_default_str();
  dec->add_option("--center-sample", d_center, "Center-placement id for a vanishing report");
  dec->add_option("--offcenter-sample", d_offcenter, "Off-center id for a vanishing report");
  dec->add_option("--targets", d_targets, "Concepts checked for vanishing")->delimiter(',');
  dec->add_option("--tau", d_tau, "Vanishing threshold")->capture_default_str();
  dec->add_option("--out", d_out, "Output file (.json or .csv); stdout when omitted");
  add_jobs(dec);
  dec->callback([&] {
    action = [&] {
      paths = {{"concepts", d_concepts}, {"embeddings", d_embeddings}, {"weights", d_weights},
               {"image", d_image}, {"out", d_out}};
      const int jobs = resolve_jobs(jobs_flag);
      log_config(err, *dec, paths, jobs);
      if (!(d_lambda >= 0.0)) throw InvalidArgument("--lambda must be >= 0");
      if (d_top < 1) throw InvalidArgument("--top must be >= 1");
      const auto dict = decomp::load_dictionary(d_concepts);

      EmbeddingTable table;
      if (!d_embeddings.empty()) {
        if (!d_weights.empty() || !d_image.empty()) throw InvalidArgument("give --embeddings or --weights/--image");
        table = load_embeddings(d_embeddings);
      } else if (!d_weights.empty() && !d_image.empty()) {
        const auto emb = vit::forward(read_png(d_image), load_weights(d_weights)).embedding;
        table.ids = {d_image.string()};
        table.rows = vit::Matrix(1, static_cast<int>(emb.values.size()));
        table.rows.data = emb.values;
      } else {
        throw InvalidArgument("decompose needs --embeddings, or --weights with --image");
      }
      if (table.rows.cols != dict.dim()) {
        throw DataError("embedding dimension " + std::to_string(table.rows.cols) + " does not match dictionary dimension " +
                        std::to_string(dict.dim()));
      }
      auto row_of = [&](const std::string& id) {
        const auto it = std::find(table.ids.begin(), table.ids.end(), id);
        if (it == table.ids.end()) throw DataError("no embedding with id '" + id + "'");
        return static_cast<int>(it - table.ids.begin());
      };
      const bool csv = has_extension(d_out, ".csv");

      if (!d_center.empty() || !d_offcenter.empty()) {
        if (d_center.empty() || d_offcenter.empty() || d_targets.empty()) {
          throw InvalidArgument("a vanishing report needs --center-sample, --offcenter-sample and --targets");
        }
        const auto wc = decomp::splice_decompose(table.rows.row(row_of(d_center)), dict, d_lambda);
        const auto wo = decomp::splice_decompose(table.rows.row(row_of(d_offcenter)), dict, d_lambda);
        const auto report = decomp::concept_vanishing_report(wc, wo, dict, d_targets, d_tau);
        const std::string text = csv ? decomp::vanishing_csv(report) : decomp::vanishing_json(report, d_tau);
        if (d_out.empty()) {
          out << text;
        } else {
          write_text(d_out, text);
        }
        return kExitOk;
      }

      std::vector<int> rows;
      if (d_samples.empty()) {
        for (int i = 0; i < table.rows.rows; ++i) rows.push_back(i);
      } else {
        for (const auto& id : d_samples) rows.push_back(row_of(id));
      }
      std::vector<decomp::ConceptWeights> weights(rows.size());
      parallel_for(rows.size(), jobs, [&](std::size_t i) {
        weights[i] = decomp::splice_decompose(table.rows.row(rows[i]), dict, d_lambda);
      });
      std::string text;
      if (csv) {
        std::ostringstream os;
        os.precision(9);
        os << "sample_id,concept,weight\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
          for (const auto& rc : decomp::top_concepts(weights[i], dict, d_top)) {
            os << table.ids[static_cast<std::size_t>(rows[i])] << ',' << rc.name << ',' << rc.weight << '\n';
          }
        }
        text = os.str();
      } else {
        ordered_json j;
        j["lambda"] = d_lambda;
        j["samples"] = ordered_json::array();
        for (std::size_t i = 0; i < rows.size(); ++i) {
          ordered_json s;
          s["sample_id"] = table.ids[static_cast<std::size_t>(rows[i])];
          const auto fields = ordered_json::parse(decomp::decomposition_json(weights[i], dict, d_top));
          for (const auto& [k, v] : fields.items()) s[k] = v;
          j["samples"].push_back(s);
        }
        text = j.dump(2) + "\n";
      }
      if (d_out.empty()) {
        out << text;
      } else {
        write_text(d_out, text);
      }
      return kExitOk;
    };
  });

  // bench
  fs::path b_weights, b_manifest, b_classes, b_out, b_baseline, b_detections, b_samples_csv, b_cells_csv, b_heatmap;
  std::string b_variant, b_model_id;
  int b_grid_k = 0;
  PromptFlags b_prompt;
  RedistFlags b_redist;
  auto* bch = app.add_subcommand("bench", "Zero-shot center/off-center accuracy for one variant");
  bch->add_option("--weights", b_weights, "Weight bundle (.cblt)")->required();
  bch->add_option("--manifest", b_manifest, "Sample manifest (.jsonl)")->required();
  bch->add_option("--classes", b_classes, "Class or candidate embedding bundle (.cblt)")->required();
  bch->add_option("--variant", b_variant, "Readout variant")
      ->required()
      ->check(CLI::IsMember({"baseline", "ar", "vp", "meanpool"}));
  bch->add_option("--out", b_out, "Report JSON")->required();
  bch->add_option("--model-id", b_model_id, "Model name in the report (default: weights file stem)");
  bch->add_option("--baseline", b_baseline, "Baseline report; fills improv_offcenter");
  bch->add_option("--grid-k", b_grid_k, "GRID side; enables per-cell maps and ground-truth vp boxes");
  bch->add_option("--detections", b_detections, "Detections JSON for vp");
  bch->add_option("--samples-csv", b_samples_csv, "Per-sample outcomes");
  bch->add_option("--cells-csv", b_cells_csv, "Per-cell accuracy (needs --grid-k)");
  bch->add_option("--heatmap", b_heatmap, "Per-cell accuracy heatmap PNG (needs --grid-k)");
  b_prompt.add(bch);
  b_redist.add(bch);
  add_jobs(bch);
  bch->callback([&] {
    action = [&] {
      paths = {{"weights", b_weights},         {"manifest", b_manifest},       {"classes", b_classes},
               {"out", b_out},                 {"baseline", b_baseline},       {"detections", b_detections},
               {"samples_csv", b_samples_csv}, {"cells_csv", b_cells_csv},     {"heatmap", b_heatmap}};
      const int jobs = resolve_jobs(jobs_flag);
      log_config(err, *bch, paths, jobs);
      if ((!b_cells_csv.empty() || !b_heatmap.empty()) && b_grid_k <= 0) {
        throw InvalidArgument("--cells-csv and --heatmap need --grid-k");
      }
      bench::BenchConfig cfg;
      cfg.model_id = b_model_id.empty() ? b_weights.stem().string() : b_model_id;
      cfg.variant = bench::parse_variant(b_variant);
      cfg.jobs = jobs;
      if (b_grid_k > 0) cfg.grid_k = b_grid_k;
      if (!b_detections.empty()) cfg.detections = intervene::load_detections(b_detections);
      cfg.prompt = b_prompt.style();
      cfg.redistribution = b_redist.config();
      const auto weights = load_weights(b_weights);
      const auto manifest = tensorio::read_manifest(b_manifest);
      const auto candidates = bench::load_candidates(b_classes);
      auto result = bench::run_bench(weights, manifest, b_manifest.parent_path(), candidates, cfg);
      if (!b_baseline.empty()) {
        const auto base = bench::read_report(b_baseline);
        result.report.improv_offcenter = bench::improvement(result.report, base);
        result.report.improv_baseline = base.model_id + "/" + bench::to_string(base.variant);
      }
      if (b_out.has_parent_path()) fs::create_directories(b_out.parent_path());
      bench::write_report(result.report, b_out);
      if (!b_samples_csv.empty()) write_text(b_samples_csv, bench::samples_csv(result.samples));
      if (!b_cells_csv.empty()) write_text(b_cells_csv, bench::cells_csv(*result.cells));
      if (!b_heatmap.empty()) bench::write_cells_heatmap(*result.cells, b_heatmap);
      const std::vector<bench::BiasReport> one{result.report};
      out << bench::report_table(one);
      if (cfg.variant == bench::Variant::kVp) {
        out << "prompt: " << b_prompt.shape << ", stroke " << b_prompt.stroke << " px, pad " << b_prompt.pad
            << " px, boxes from " << (cfg.detections ? "detections" : "grid anchors") << '\n';
      }
      return kExitOk;
    };
  });

  // report
  std::vector<fs::path> r_reports;
  fs::path r_baseline, r_out, r_json;
  auto* rep = app.add_subcommand("report", "Tabulate bias reports and fill improvements over a baseline");
  rep->add_option("reports", r_reports, "Report JSON files")->required();
  rep->add_option("--baseline", r_baseline,
                  "Baseline report (default: the baseline-variant input sharing each report's manifest)");
  rep->add_option("--out", r_out, "Write the table here as well as to stdout");
  rep->add_option("--json-out", r_json, "Write all reports, improvements filled, as a JSON array");
  rep->callback([&] {
    action = [&] {
      paths = {{"baseline", r_baseline}, {"out", r_out}, {"json_out", r_json}};
      log_config(err, *rep, paths, resolve_jobs(jobs_flag));
      std::vector<bench::BiasReport> reports;
      for (const auto& p : r_reports) reports.push_back(bench::read_report(p));
      std::optional<bench::BiasReport> explicit_base;
      if (!r_baseline.empty()) explicit_base = bench::read_report(r_baseline);
      for (auto& r : reports) {
        const bench::BiasReport* base = nullptr;
        if (explicit_base) {
          base = &*explicit_base;
        } else {
          for (const auto& cand : reports) {
            if (cand.variant == bench::Variant::kBaseline && cand.manifest_digest == r.manifest_digest &&
                cand.model_id == r.model_id) {
              base = &cand;
              break;
            }
          }
        }
        if (!base || (r.variant == base->variant && r.model_id == base->model_id)) continue;
        r.improv_offcenter = bench::improvement(r, *base);
        r.improv_baseline = base->model_id + "/" + bench::to_string(base->variant);
      }
      const std::string table = bench::report_table(reports);
      out << table;
      if (!r_out.empty()) write_text(r_out, table);
      if (!r_json.empty()) {
        ordered_json arr = ordered_json::array();
        for (const auto& r : reports) arr.push_back(ordered_json::parse(bench::report_json(r)));
        write_text(r_json, arr.dump(2) + "\n");
      }
      return kExitOk;
    };
  });

  // fixture
  fixture::FixtureConfig fcfg;
  fs::path f_out;
  auto* fix = app.add_subcommand("fixture", "Write the center-biased test encoder, class embeddings, concepts and sources");
  fix->add_option("--out", f_out, "Output directory")->required();
  fix->add_option("--seed", fcfg.seed, "Random seed for prototypes and sources")->capture_default_str();
  fix->add_option("--images-per-class", fcfg.images_per_class, "Source images per class")->capture_default_str();
  fix->add_option("--patch-px", fcfg.patch_px, "Model patch side in pixels (even)")->capture_default_str();
  fix->add_option("--k", fcfg.k, "Patch grid side (odd, >= 5)")->capture_default_str();
  fix->callback([&] {
    action = [&] {
      paths = {{"out", f_out}};
      log_config(err, *fix, paths, resolve_jobs(jobs_flag));
      const auto fx = fixture::build_fixture(fcfg);
      fixture::write_fixture(fx, f_out);
      out << "wrote fixture to " << f_out.string() << " (" << fx.classes.names.size() << " classes, "
          << fx.classes.names.size() * static_cast<std::size_t>(fcfg.images_per_class) << " source images)\n";
      return kExitOk;
    };
  });

  if (!args.empty() && !args.front().empty() && args.front()[0] != '-' && !app.get_subcommand_no_throw(args.front())) {
    err << "error: unknown subcommand '" << args.front() << "'\n"
        << "run 'centerlens --help' for usage\n";
    return kExitUsage;
  }

  std::vector<std::string> argv_storage{"centerlens"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n"
        << "run 'centerlens --help' for usage\n";
    return kExitUsage;
  }

  try {
    return action ? action() : kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace centerlens::cli
