#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hoplab/experiments/commands.hpp"

namespace {

using hoplab::experiments::FinetuneOptions;
using hoplab::experiments::GenDataOptions;
using hoplab::experiments::ProbeOptions;
using hoplab::experiments::ReportOptions;
using hoplab::experiments::TrainOptions;

void add_train_flags(CLI::App* cmd, hoplab::trainer::TrainConfig& t) {
  cmd->add_option("--steps", t.steps, "optimization steps");
  cmd->add_option("--batch-size", t.batch_size, "examples per step");
  cmd->add_option("--learning-rate", t.learning_rate, "peak learning rate");
  cmd->add_option("--weight-decay", t.weight_decay,
                  "decoupled decay on weight matrices");
  cmd->add_option("--beta1", t.beta1, "first-moment decay");
  cmd->add_option("--beta2", t.beta2, "second-moment decay");
  cmd->add_option("--adam-eps", t.adam_eps, "adaptive-moment epsilon");
  cmd->add_option("--warmup-steps", t.warmup_steps,
                  "linear warmup length in steps");
  cmd->add_option("--eval-interval", t.eval_interval,
                  "steps between metric rows");
  cmd->add_option("--eval-sample-size", t.eval_sample_size,
                  "queries sampled per eval set");
  cmd->add_option("--probe-sample-size", t.probe_sample_size,
                  "queries traced for bridge rates");
  cmd->add_option("--seed", t.seed, "training seed (batches and eval)");
  cmd->add_option("--pool-weights", t.pool_weights,
                  "sampling weights for the three training pools")
      ->expected(3);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for two-hop reasoning circuits in "
               "parameter-sharing transformers"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file; flags override");
  app.set_version_flag("--version", hoplab::experiments::kToolVersion);

  GenDataOptions gen;
  CLI::App* cgen = app.add_subcommand("gen-data",
                                      "generate and serialize a dataset bundle");
  cgen->add_option("--num-entities", gen.spec.num_entities, "entity count");
  cgen->add_option("--num-relations", gen.spec.num_relations,
                   "relation count");
  cgen->add_option("--out-degree", gen.spec.out_degree,
                   "distinct relations per entity");
  cgen->add_option("--ood-fraction", gen.spec.ood_fraction,
                   "fraction of facts held out as OOD");
  cgen->add_option("--phi", gen.spec.phi,
                   "train-inferred to atomic-ID ratio");
  cgen->add_option("--seed", gen.spec.seed, "generation seed");
  cgen->add_option("--regime", gen.regime,
                   "natural|hop1_full|hop2_full|both_full");
  cgen->add_option("--aug-per-fact", gen.aug_per_fact,
                   "injected queries per OOD fact");
  cgen->add_option("--aug-seed", gen.aug_seed,
                   "augmentation seed (0: follow --seed)");
  cgen->add_option("--out-dir", gen.out_dir, "bundle output directory")
      ->required();

  TrainOptions tr;
  CLI::App* ctrain = app.add_subcommand("train", "pretrain on a bundle");
  ctrain->add_option("--bundle", tr.bundle_dir, "bundle directory")
      ->required();
  ctrain->add_option("--out-dir", tr.out_dir, "run output directory")
      ->required();
  ctrain->add_option("--regime", tr.train.regime,
                     "must match the bundle's regime");
  ctrain->add_option("--model-dim", tr.model.model_dim, "residual width");
  ctrain->add_option("--num-heads", tr.model.num_heads, "attention heads");
  ctrain->add_option("--mlp-dim", tr.model.mlp_dim, "mlp inner width");
  ctrain->add_option("--num-iterations", tr.model.num_iterations,
                     "shared-block applications L");
  ctrain->add_option("--model-seed", tr.model.seed,
                     "init seed (0: follow --seed)");
  ctrain->add_option("--checkpoint-interval", tr.train.checkpoint_interval,
                     "steps between checkpoints (0: end only)");
  ctrain->add_option("--resume-from", tr.train.resume_from,
                     "checkpoint to resume (expects .opt sidecar)");
  add_train_flags(ctrain, tr.train);

  ProbeOptions pr;
  CLI::App* cprobe = app.add_subcommand(
      "probe", "lens-decode hidden traces of a checkpoint");
  cprobe->add_option("--checkpoint", pr.checkpoint, "model checkpoint")
      ->required();
  cprobe->add_option("--bundle", pr.bundle_dir, "bundle directory")
      ->required();
  cprobe->add_option("--eval-set", pr.eval_set,
                     "eval_ood|eval_id_held|eval_mixed_hop1|eval_mixed_hop2|"
                     "train_inferred|augmentation");
  cprobe->add_option("--sample-size", pr.sample_size, "queries to trace");
  cprobe->add_option("--seed", pr.seed, "sampling seed");
  cprobe->add_option("--top-k", pr.top_k, "decoded tokens per site");
  cprobe->add_option("--positions", pr.positions,
                     "input positions to probe (1..3)");
  cprobe->add_option("--out-dir", pr.out_dir, "output directory")->required();

  FinetuneOptions ft;
  CLI::App* cft = app.add_subcommand(
      "finetune", "finetune a checkpoint on new atomic facts");
  cft->add_option("--checkpoint", ft.checkpoint, "base checkpoint")
      ->required();
  cft->add_option("--bundle", ft.bundle_dir, "pretraining bundle directory")
      ->required();
  cft->add_option("--out-dir", ft.out_dir, "run output directory")->required();
  cft->add_option("--n-new", ft.n_new, "new facts to instantiate");
  cft->add_option("--n-retain", ft.n_retain, "original ID facts to retain");
  cft->add_option("--finetune-seed", ft.finetune_seed,
                  "finetune bundle seed");
  add_train_flags(cft, ft.train);

  ReportOptions rp;
  CLI::App* crep = app.add_subcommand(
      "report", "summarize metrics files and emit plot-ready series");
  crep->add_option("--metrics", rp.metrics_files, "metrics csv files")
      ->required()
      ->expected(-1);
  crep->add_option("--out", rp.out_file, "json output path");
  crep->add_option("--sat-threshold", rp.sat_threshold,
                   "train saturation threshold");
  crep->add_option("--ood-threshold", rp.ood_threshold,
                   "generalization threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (cgen->parsed()) return hoplab::experiments::cmd_gen_data(gen);
    if (ctrain->parsed()) return hoplab::experiments::cmd_train(tr);
    if (cprobe->parsed()) return hoplab::experiments::cmd_probe(pr);
    if (cft->parsed()) return hoplab::experiments::cmd_finetune(ft);
    if (crep->parsed()) return hoplab::experiments::cmd_report(rp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
