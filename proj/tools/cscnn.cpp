// Single entry point for every workflow: synthetic data generation, training,
// evaluation, ablation, cost analysis, lookup export, serving, benchmarking.
// Machine-readable TSV goes to stdout, prose to stderr.

#include <chrono>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "cscnn/ablation.hpp"
#include "cscnn/checkpoint.hpp"
#include "cscnn/data.hpp"
#include "cscnn/eval.hpp"
#include "cscnn/lookup.hpp"
#include "cscnn/server.hpp"
#include "cscnn/trainer.hpp"

using namespace cscnn;

namespace {

struct ModelFlags {
  std::string loss = "pointwise";
  std::string head = "mf";
  std::string variant = "cscnn";
  double lr = 0.01;
  double lambda = 1e-4;
  int cap = 25;
  int batch = 64;
  int epochs = 30;
  int latent_dim = 8;
  int visual_dim = 16;
  int lprime = 2;
  int cprime = 8;
  int hprime = 3, wprime = 3;
  int reduction = 2;
  std::string channels = "6,12,24";
  bool no_visual = false;
  bool freeze_encoder = false;
  bool share_by_category = false;
};

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
  cmd->add_option("--loss", m.loss, "pointwise or pairwise")->check(CLI::IsMember({"pointwise", "pairwise"}));
  cmd->add_option("--head", m.head, "mf or dcn")->check(CLI::IsMember({"mf", "dcn"}));
  cmd->add_option("--variant", m.variant, "attention variant: none, se, cbam-channel, cbam-all, cscnn");
  cmd->add_option("--lr", m.lr, "learning rate");
  cmd->add_option("--lambda", m.lambda, "L2 regularization weight");
  cmd->add_option("--cap", m.cap, "max impressions per ad per batch");
  cmd->add_option("--batch", m.batch, "batch size");
  cmd->add_option("--epochs", m.epochs, "training epochs");
  cmd->add_option("--latent-dim", m.latent_dim, "MF latent width");
  cmd->add_option("--visual-dim", m.visual_dim, "visual feature width");
  cmd->add_option("--lprime", m.lprime, "trailing conv layers with attention");
  cmd->add_option("--cprime", m.cprime, "channel prior width");
  cmd->add_option("--hprime", m.hprime, "spatial prior height");
  cmd->add_option("--wprime", m.wprime, "spatial prior width");
  cmd->add_option("--reduction", m.reduction, "attention bottleneck divisor");
  cmd->add_option("--channels", m.channels, "conv channel widths, comma separated");
  cmd->add_flag("--no-visual", m.no_visual, "drop the image pathway (BPR-MF)");
  cmd->add_flag("--freeze-encoder", m.freeze_encoder, "train the head only");
  cmd->add_flag("--share-by-category", m.share_by_category, "share item factors per category");
}

TrainConfig to_train_config(const ModelFlags& m, uint64_t seed) {
  TrainConfig cfg;
  cfg.loss = m.loss == "pairwise" ? LossMode::Pairwise : LossMode::Pointwise;
  cfg.head = m.head == "dcn" ? HeadKind::Dcn : HeadKind::Mf;
  cfg.lr = m.lr;
  cfg.lambda = m.lambda;
  cfg.ad_cap = m.cap;
  cfg.batch_size = m.batch;
  cfg.epochs = m.epochs;
  cfg.seed = seed;
  cfg.latent_dim = m.latent_dim;
  cfg.use_visual = !m.no_visual;
  cfg.freeze_encoder = m.freeze_encoder;
  cfg.share_item_by_category = m.share_by_category;

  cfg.backbone.variant = variant_from_name(m.variant);
  cfg.backbone.visual_dim = m.visual_dim;
  cfg.backbone.lprime = m.lprime;
  cfg.backbone.cprime = m.cprime;
  cfg.backbone.hprime = m.hprime;
  cfg.backbone.wprime = m.wprime;
  cfg.backbone.reduction = m.reduction;
  cfg.backbone.convs.clear();
  for (int c : parse_int_list(m.channels)) cfg.backbone.convs.push_back({c, 3, 1, 1, true});
  return cfg;
}

int run_gen(const std::string& out_interactions, const std::string& out_images,
            const SyntheticConfig& cfg) {
  SyntheticData data = generate_synthetic(cfg);
  write_interactions(data.log, out_interactions);
  write_images(data.images, out_images);
  std::cerr << "generated " << data.log.rows.size() << " impressions, " << data.log.n_users
            << " users, " << data.log.n_ads << " ads, " << data.log.n_categories
            << " categories\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-conditioned attention CTR toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value config file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  uint64_t seed = 1;
  app.add_option("--seed", seed, "random seed for every subcommand")->configurable(true);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  SyntheticConfig gen_cfg;
  std::string gen_interactions = "interactions.tsv", gen_images = "images.imgs";
  gen->add_option("--users", gen_cfg.n_users);
  gen->add_option("--ads", gen_cfg.n_ads);
  gen->add_option("--categories", gen_cfg.n_categories);
  gen->add_option("--impressions", gen_cfg.impressions_per_user, "impressions per user");
  gen->add_option("--img-size", gen_cfg.img_size);
  gen->add_option("--groups", gen_cfg.groups, "collaborative block structure, 1 = off");
  gen->add_option("--targeted-frac", gen_cfg.targeted_frac);
  gen->add_option("--out-interactions", gen_interactions);
  gen->add_option("--out-images", gen_images);

  // train
  auto* train = app.add_subcommand("train", "train a CTR model");
  ModelFlags train_flags;
  std::string train_interactions, train_images, train_out = "model.ckpt", train_metrics;
  train->add_option("--interactions", train_interactions)->required();
  train->add_option("--images", train_images);
  train->add_option("--out", train_out, "checkpoint path");
  train->add_option("--metrics", train_metrics, "also write epoch metrics to this file");
  add_model_flags(train, train_flags);

  // eval
  auto* eval = app.add_subcommand("eval", "test-set AUC of a checkpoint");
  ModelFlags eval_flags;
  std::string eval_interactions, eval_images, eval_ckpt;
  eval->add_option("--interactions", eval_interactions)->required();
  eval->add_option("--images", eval_images);
  eval->add_option("--checkpoint", eval_ckpt)->required();
  add_model_flags(eval, eval_flags);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "attention-variant ablation");
  ModelFlags ablate_flags;
  std::string ablate_interactions, ablate_images, ablate_variants = "none,cbam-all,cscnn";
  int ablate_seeds = 5;
  ablate->add_option("--interactions", ablate_interactions)->required();
  ablate->add_option("--images", ablate_images)->required();
  ablate->add_option("--variants", ablate_variants, "comma-separated variant list");
  ablate->add_option("--seeds", ablate_seeds, "runs per variant");
  add_model_flags(ablate, ablate_flags);

  // cost
  auto* cost = app.add_subcommand("cost", "analytic parameter/FLOP calculator");
  std::string cost_backbone = "resnet18", cost_variant = "cscnn";
  long long cost_categories = 3310;
  int cost_cprime = 20, cost_hprime = 6, cost_wprime = 6, cost_reduction = 4;
  cost->add_option("--backbone", cost_backbone)->check(CLI::IsMember({"resnet18"}));
  cost->add_option("--variant", cost_variant);
  cost->add_option("--categories", cost_categories);
  cost->add_option("--cprime", cost_cprime);
  cost->add_option("--hprime", cost_hprime);
  cost->add_option("--wprime", cost_wprime);
  cost->add_option("--reduction", cost_reduction);

  // export-lookup
  auto* exp = app.add_subcommand("export-lookup", "bake visual features into a lookup table");
  ModelFlags exp_flags;
  std::string exp_interactions, exp_images, exp_ckpt, exp_out = "features.lut";
  double exp_coverage = 1.0;
  exp->add_option("--interactions", exp_interactions)->required();
  exp->add_option("--images", exp_images)->required();
  exp->add_option("--checkpoint", exp_ckpt)->required();
  exp->add_option("--out", exp_out);
  exp->add_option("--coverage", exp_coverage, "fraction of ads retained, by frequency");
  add_model_flags(exp, exp_flags);

  // serve
  auto* serve = app.add_subcommand("serve", "line-protocol CTR server");
  ModelFlags serve_flags;
  std::string serve_interactions, serve_lookup, serve_ckpt;
  int serve_port = 0;
  serve->add_option("--interactions", serve_interactions, "source of feature vocabularies")->required();
  serve->add_option("--lookup", serve_lookup)->required();
  serve->add_option("--checkpoint", serve_ckpt)->required();
  serve->add_option("--port", serve_port, "0 picks a free port");
  add_model_flags(serve, serve_flags);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "drive load against a running server");
  std::string bench_host = "127.0.0.1", bench_interactions;
  int bench_port = 0, bench_requests = 10000, bench_concurrency = 1;
  bench_cmd->add_option("--host", bench_host);
  bench_cmd->add_option("--port", bench_port)->required();
  bench_cmd->add_option("--requests", bench_requests);
  bench_cmd->add_option("--concurrency", bench_concurrency);
  bench_cmd->add_option("--interactions", bench_interactions, "sample requests from this log")
      ->required();

  for (auto* sub : app.get_subcommands(nullptr)) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      gen_cfg.seed = seed;
      return run_gen(gen_interactions, gen_images, gen_cfg);
    }

    if (*train) {
      InteractionLog log = load_interactions(train_interactions);
      ImageStore images;
      TrainConfig cfg = to_train_config(train_flags, seed);
      if (cfg.use_visual) {
        if (train_images.empty()) throw std::runtime_error("train: --images required unless --no-visual");
        images = load_images(train_images);
      }
      EvalSplit split = split_log(log, seed);
      std::cerr << "split: " << split.included_users << " users included, "
                << split.excluded_users << " excluded\n";
      Trainer<float> trainer(log, images, split, cfg);
      std::cout << "epoch\tloss\tval_auc\n";
      trainer.run(&std::cout);
      if (!train_metrics.empty()) {
        std::ofstream mf(train_metrics);
        mf << "epoch\tloss\tval_auc\n";
        for (const auto& e : trainer.history()) mf << e.epoch << '\t' << e.loss << '\t' << e.val_auc << '\n';
      }
      save_checkpoint(train_out, trainer.named_params());
      std::cerr << "best epoch " << trainer.best_epoch() << " (val AUC " << trainer.best_val_auc()
                << "), checkpoint written to " << train_out << "\n";
      return 0;
    }

    if (*eval) {
      InteractionLog log = load_interactions(eval_interactions);
      ImageStore images;
      TrainConfig cfg = to_train_config(eval_flags, seed);
      if (cfg.use_visual) {
        if (eval_images.empty()) throw std::runtime_error("eval: --images required unless --no-visual");
        images = load_images(eval_images);
      }
      EvalSplit split = split_log(log, seed);
      Trainer<float> trainer(log, images, split, cfg);
      load_checkpoint(eval_ckpt, trainer.named_params());
      trainer.refresh_visual_cache();
      auto score = [&trainer](int u, int a) { return trainer.score(u, a); };
      std::cout << "split\tauc\tusers\tskipped\n";
      for (auto [name, filter] :
           {std::pair<const char*, ItemFilter>{"all", ItemFilter::All}, {"cold", ItemFilter::Cold}}) {
        AucResult r = compute_auc(score, log, split, SplitSide::Test, filter);
        std::cout << name << '\t' << r.auc << '\t' << r.users << '\t' << r.skipped << '\n';
      }
      return 0;
    }

    if (*ablate) {
      InteractionLog log = load_interactions(ablate_interactions);
      ImageStore images = load_images(ablate_images);
      EvalSplit split = split_log(log, seed);
      std::vector<AttentionVariant> variants;
      std::stringstream ss(ablate_variants);
      std::string item;
      while (std::getline(ss, item, ',')) variants.push_back(variant_from_name(item));
      TrainConfig cfg = to_train_config(ablate_flags, seed);
      auto table = run_ablation(log, images, split, variants, ablate_seeds, cfg, &std::cerr);
      std::cout << "variant\tsplit\tmean\tstd\n";
      for (const auto& cell : table)
        std::cout << variant_name(cell.variant) << '\t' << cell.split << '\t' << cell.mean << '\t'
                  << cell.stddev << '\n';
      return 0;
    }

    if (*cost) {
      AttentionVariant variant = variant_from_name(cost_variant);
      CostSpec spec = resnet18_cost_spec(variant, cost_categories, cost_cprime, cost_hprime,
                                         cost_wprime, cost_reduction);
      ModelCost c = count_cost(spec);
      CostSpec cbam_spec = resnet18_cost_spec(AttentionVariant::CBAMAll, cost_categories,
                                              cost_cprime, cost_hprime, cost_wprime, cost_reduction);
      ModelCost cbam = count_cost(cbam_spec);
      std::cout << "metric\tvalue\n";
      std::cout << "params_base\t" << c.base_params << '\n';
      std::cout << "params_channel\t" << c.channel_total() << '\n';
      std::cout << "params_spatial\t" << c.spatial_total() << '\n';
      std::cout << "params_total\t" << c.total_params() << '\n';
      std::cout << "params_delta_over_base\t" << c.attention_params() << '\n';
      std::cout << "params_delta_over_cbam\t" << c.attention_params() - cbam.attention_params()
                << '\n';
      std::cout << "gflops_total\t" << c.total_gflops() << '\n';
      return 0;
    }

    if (*exp) {
      InteractionLog log = load_interactions(exp_interactions);
      ImageStore images = load_images(exp_images);
      TrainConfig cfg = to_train_config(exp_flags, seed);
      EvalSplit split = split_log(log, seed);
      Trainer<float> trainer(log, images, split, cfg);
      load_checkpoint(exp_ckpt, trainer.named_params());
      LookupTable table = export_lookup(trainer.backbone(), log, images, exp_coverage);
      write_lookup(table, exp_out);
      std::cerr << "exported " << table.size() << " ads at dim " << table.dim() << " to "
                << exp_out << "\n";
      return 0;
    }

    if (*serve) {
      InteractionLog log = load_interactions(serve_interactions);
      TrainConfig cfg = to_train_config(serve_flags, seed);
      DcnConfig dcfg;
      dcfg.feature_vocabs = log.feature_vocab.empty() ? std::vector<int>{1} : log.feature_vocab;
      dcfg.embed_dim = cfg.dcn_embed_dim;
      dcfg.visual_dim = cfg.backbone.visual_dim;
      dcfg.deep0 = cfg.dcn_deep0;
      dcfg.deep_rest = cfg.dcn_deep_rest;
      dcfg.cross_depth = cfg.dcn_cross_depth;
      std::mt19937_64 rng(seed);
      ServeModel model{load_lookup(serve_lookup), DcnModel<float>(dcfg, rng)};
      std::vector<std::pair<std::string, Tensor<float>>> params;
      model.dcn.collect_params(params);
      load_checkpoint(serve_ckpt, params);
      Server server(std::move(model));
      int port = server.start(serve_port);
      std::cout << "listening\t" << port << std::endl;
      std::cerr << "serving; terminate with SIGINT\n";
      while (true) std::this_thread::sleep_for(std::chrono::seconds(3600));
    }

    if (*bench_cmd) {
      InteractionLog log = load_interactions(bench_interactions);
      if (log.rows.empty()) throw std::runtime_error("bench: empty interaction log");
      std::vector<std::string> requests;
      requests.reserve(static_cast<size_t>(bench_requests));
      for (int i = 0; i < bench_requests; ++i) {
        const auto& row = log.rows[static_cast<size_t>(i) % log.rows.size()];
        std::string line = std::to_string(log.ad_orig[row.ad]) + "\t";
        for (size_t f = 0; f < row.feats.size(); ++f)
          line += (f ? "," : "") + std::to_string(row.feats[f].first) + ":" +
                  std::to_string(row.feats[f].second);
        requests.push_back(std::move(line));
      }
      LatencyStats stats = bench(bench_host, bench_port, requests, bench_concurrency);
      std::cout << "metric\tvalue\n";
      std::cout << "requests\t" << stats.micros.size() << '\n';
      std::cout << "concurrency\t" << bench_concurrency << '\n';
      std::cout << "p50_us\t" << stats.p50() << '\n';
      std::cout << "p99_us\t" << stats.p99() << '\n';
      std::cout << "first_request_us\t" << stats.first_request_micros << '\n';
      std::cout << "throughput_per_s\t" << stats.throughput() << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
