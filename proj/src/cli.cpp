#include "gapfill/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "gapfill/baselines.hpp"
#include "gapfill/cohort_io.hpp"
#include "gapfill/data.hpp"
#include "gapfill/error.hpp"
#include "gapfill/eval.hpp"
#include "gapfill/masking.hpp"
#include "gapfill/mrnn.hpp"
#include "text.hpp"

namespace gapfill::cli {

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

std::string read_text(const std::string& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Writer>
void write_out(const std::string& path, Writer&& writer) {
  std::ostringstream buffer;
  writer(buffer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << buffer.str();
  if (!out.flush()) throw IoError("failed writing '" + path + "'");
}

Cohort load_cohort(const std::string& path) {
  auto in = open_in(path);
  try {
    return read_cohort_csv(in);
  } catch (const Error& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  for (auto field : detail::split_fields(text)) {
    auto v = detail::parse_number<double>(field);
    if (!v) throw ConfigError("--grid: cannot parse '" + std::string(field) + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<Method> parse_methods(const std::string& text) {
  std::vector<Method> out;
  for (auto field : detail::split_fields(text)) {
    try {
      out.push_back(parse_method(std::string(field)));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("--methods: ") + e.what());
    }
  }
  return out;
}

struct MaskFlags {
  std::optional<double> tau;
  std::optional<double> center;
  std::optional<double> sd;

  void add(CLI::App* app) {
    app->add_option("--tau", tau, "Missing probability per entry")->check(CLI::Range(0.0, 1.0));
    app->add_option("--gaussian-center", center, "Center grid index of the Gaussian pattern");
    app->add_option("--gaussian-sd", sd, "Spread (grid indices) of the Gaussian pattern")
        ->check(CLI::PositiveNumber);
  }

  MaskSpec spec(std::uint64_t seed) const {
    MaskSpec s;
    s.seed = seed;
    if (center || sd) {
      if (tau) throw ConfigError("--tau cannot be combined with --gaussian-center/--gaussian-sd");
      if (!center || !sd) throw ConfigError("--gaussian-center and --gaussian-sd must be given together");
      s.mode = GaussianPatternMask{*center, *sd};
    } else {
      s.mode = BernoulliMask{tau.value_or(0.2)};
    }
    s.validate();
    return s;
  }
};

struct TrainFlags {
  TrainConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--epochs", cfg.epochs, "Maximum training epochs")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--batch", cfg.batch, "Segments per Adam step")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--patience", cfg.patience, "Early-stopping patience (epochs)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--val-fraction", cfg.validation_fraction, "Share of training segments used for validation")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
  }
};

struct SourceFlags {
  std::string in;
  SynthSpec synth;

  void add(CLI::App* app) {
    app->add_option("--in", in, "Complete cohort CSV (default: synthesize one)");
    app->add_option("--n", synth.n_segments, "Synthetic segment count")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--length", synth.length, "Synthetic sequence length")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--noise-sd", synth.noise_sd, "Synthetic multiplicative noise")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    app->add_option("--synth-seed", synth.seed, "Seed of the synthetic cohort")->capture_default_str();
  }

  Cohort load() const {
    Cohort c = in.empty() ? synthesize_cohort(synth) : load_cohort(in);
    if (!c.fully_observed()) throw PreconditionError("--in must be a fully observed cohort");
    return c;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Missing-value imputation for multivariate traffic time series", "gapfill"};
  app.set_version_flag("--version", std::string("gapfill ") + kVersion);
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());

  // synth
  SynthSpec synth;
  std::string synth_out;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic complete cohort as raw CSV");
  c_synth->add_option("--n", synth.n_segments, "Segment count")->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--length", synth.length, "Minutes per segment")->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--noise-sd", synth.noise_sd, "Multiplicative noise sd")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  c_synth->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  c_synth->add_option("--out", synth_out, "Output CSV")->required();

  // ingest
  std::string ingest_in, ingest_out;
  double min_confidence = 95.0;
  std::size_t min_length = 1;
  auto* c_ingest = app.add_subcommand("ingest", "Filter raw records and select a cohort on a shared grid");
  c_ingest->add_option("--in", ingest_in, "Raw CSV")->required();
  c_ingest->add_option("--min-confidence", min_confidence, "Minimum confidence_pct kept")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 100.0));
  c_ingest->add_option("--min-length", min_length, "Minimum shared contiguous minutes")
      ->required()
      ->check(CLI::PositiveNumber);
  c_ingest->add_option("--out", ingest_out, "Cohort CSV")->required();

  // mask
  std::string mask_in, mask_out, ledger_out;
  MaskFlags mask_flags;
  auto* c_mask = app.add_subcommand("mask", "Remove entries from a complete cohort and keep the ground truth");
  c_mask->add_option("--in", mask_in, "Complete cohort CSV")->required();
  mask_flags.add(c_mask);
  c_mask->add_option("--seed", seed, "Random seed")->capture_default_str();
  c_mask->add_option("--out", mask_out, "Masked cohort CSV")->required();
  c_mask->add_option("--ledger-out", ledger_out, "Ground-truth ledger CSV")->required();

  // train
  std::string train_in, model_out, trace_out;
  TrainFlags train_flags;
  auto* c_train = app.add_subcommand("train", "Fit the M-RNN on a masked cohort");
  c_train->add_option("--in", train_in, "Masked cohort CSV")->required();
  train_flags.add(c_train);
  c_train->add_option("--seed", seed, "Random seed")->capture_default_str();
  c_train->add_option("--model-out", model_out, "Checkpoint JSON")->required();
  c_train->add_option("--trace-out", trace_out, "Per-epoch loss CSV");

  // impute
  std::string impute_in, impute_model, impute_out, impute_method = "mrnn";
  auto* c_impute = app.add_subcommand("impute", "Fill missing entries of a masked cohort");
  c_impute->add_option("--in", impute_in, "Masked cohort CSV")->required();
  c_impute->add_option("--model", impute_model, "Checkpoint JSON (required for mrnn)");
  c_impute->add_option("--method", impute_method, "mrnn, spline or softimpute")->capture_default_str();
  c_impute->add_option("--seed", seed, "Random seed (softimpute lambda selection)")->capture_default_str();
  c_impute->add_option("--out", impute_out, "Completed cohort CSV")->required();

  // eval
  std::string eval_in, eval_model, eval_ledger, eval_report, eval_eta, eval_methods = "mrnn,spline,softimpute";
  bool record_runtime = false;
  auto* c_eval = app.add_subcommand("eval", "Score methods on a masked cohort against its ledger");
  c_eval->add_option("--in", eval_in, "Masked cohort CSV")->required();
  c_eval->add_option("--ledger", eval_ledger, "Ground-truth ledger CSV")->required();
  c_eval->add_option("--model", eval_model, "Checkpoint JSON (required for mrnn)");
  c_eval->add_option("--methods", eval_methods, "Comma-separated methods")->capture_default_str();
  c_eval->add_option("--seed", seed, "Random seed")->capture_default_str();
  c_eval->add_option("--report-out", eval_report, "Report CSV")->required();
  c_eval->add_option("--eta-out", eval_eta, "Improvement summary CSV");
  c_eval->add_flag("--record-runtime", record_runtime, "Fill the runtime_s column");

  // crossval and sweep share their experiment flags
  SourceFlags cv_source, sw_source;
  MaskFlags cv_mask, sw_mask;
  TrainFlags cv_train, sw_train;
  std::size_t cv_folds = 5, sw_folds = 5;
  std::string cv_methods = "mrnn,spline,softimpute", sw_methods = "mrnn,spline,softimpute";
  std::string cv_report, cv_eta, sw_report, sw_plot, sw_axis, sw_grid;
  auto add_experiment = [&](CLI::App* c, SourceFlags& src, MaskFlags& mask, TrainFlags& tr, std::size_t& folds,
                            std::string& methods) {
    src.add(c);
    mask.add(c);
    tr.add(c);
    c->add_option("--folds", folds, "Cross-validation folds")->capture_default_str()->check(CLI::Range(2, 1000000));
    c->add_option("--methods", methods, "Comma-separated methods")->capture_default_str();
    c->add_option("--seed", seed, "Root seed")->capture_default_str();
    c->add_option("--workers", workers, "Concurrent fold jobs")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_flag("--record-runtime", record_runtime, "Fill the runtime_s column");
  };
  auto* c_cv = app.add_subcommand("crossval", "k-fold comparison of M-RNN, spline and soft-impute");
  add_experiment(c_cv, cv_source, cv_mask, cv_train, cv_folds, cv_methods);
  c_cv->add_option("--report-out", cv_report, "Report CSV")->required();
  c_cv->add_option("--eta-out", cv_eta, "Improvement summary CSV");

  auto* c_sweep = app.add_subcommand("sweep", "Cross-validated comparison over a tau, L or N grid");
  add_experiment(c_sweep, sw_source, sw_mask, sw_train, sw_folds, sw_methods);
  c_sweep->add_option("--axis", sw_axis, "tau, L or N")->required()->check(CLI::IsMember({"tau", "L", "N"}));
  c_sweep->add_option("--grid", sw_grid, "Comma-separated axis values")->required();
  c_sweep->add_option("--report-out", sw_report, "Report CSV")->required();
  c_sweep->add_option("--plot-out", sw_plot, "SVG line chart");

  // gradcheck
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of the M-RNN training gradient");
  c_grad->add_option("--seed", seed, "Random seed")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  err << "# gapfill " << kVersion << " " << cmd->get_name() << "\n" << cmd->config_to_str(true, false);
  err.flush();

  try {
    if (cmd == c_synth) {
      const Cohort c = synthesize_cohort(synth);
      write_out(synth_out, [&](std::ostream& o) { write_raw_csv(c, o); });
    } else if (cmd == c_ingest) {
      auto in = open_in(ingest_in);
      const auto raw = ingest_csv(in, min_confidence);
      err << "ingest: kept " << raw.records.size() << " rows, dropped " << raw.dropped << " below confidence\n";
      const Cohort c = select_cohort(raw.records, raw.segments, min_length);
      err << "ingest: cohort of " << c.size() << " segments, L = " << c.length() << "\n";
      write_out(ingest_out, [&](std::ostream& o) { write_cohort_csv(c, o); });
    } else if (cmd == c_mask) {
      const MaskSpec spec = mask_flags.spec(seed);
      const auto result = apply_mask(load_cohort(mask_in), spec);
      write_out(mask_out, [&](std::ostream& o) { write_cohort_csv(result.masked, o); });
      write_out(ledger_out, [&](std::ostream& o) { write_ledger_csv(result.ledger, o); });
    } else if (cmd == c_train) {
      TrainConfig cfg = train_flags.cfg;
      cfg.seed = seed;
      if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
        throw ConfigError("--val-fraction must lie strictly between 0 and 1");
      }
      const Cohort scaled = normalize(load_cohort(train_in));
      cfg.dims.streams = scaled.streams();
      const auto result = train(scaled, cfg);
      write_out(model_out, [&](std::ostream& o) { o << result.model.to_json_text(); });
      if (!trace_out.empty()) {
        write_out(trace_out, [&](std::ostream& o) {
          o << "epoch,train_loss,validation_loss,grad_norm\n";
          for (std::size_t e = 0; e < result.trace.size(); ++e) {
            const auto& s = result.trace[e];
            o << e + 1 << ',' << detail::format_double(s.train_loss) << ','
              << detail::format_double(s.validation_loss) << ',' << detail::format_double(s.grad_norm) << '\n';
          }
        });
      }
      out << "initial_train_loss " << detail::format_double(result.initial_train_loss) << "\n"
          << "best_epoch " << result.best_epoch << "\n"
          << "epochs_run " << result.trace.size() << "\n";
    } else if (cmd == c_impute) {
      const Method method = parse_method(impute_method);
      const Cohort masked = load_cohort(impute_in);
      Cohort filled;
      if (method == Method::mrnn) {
        if (impute_model.empty()) throw ConfigError("--model is required for --method mrnn");
        const auto model = MrnnModel::from_json_text(read_text(impute_model));
        if (!model.norm) throw SchemaError(impute_model + ": checkpoint has no norm_params");
        filled = denormalize(impute(model, normalize_with(masked, *model.norm)));
      } else if (method == Method::spline) {
        filled = denormalize(spline_impute(normalize(masked)));
      } else {
        const Cohort scaled = normalize(masked);
        const auto cm = cohort_to_matrix(scaled);
        SoftImputeConfig sc;
        sc.seed = seed;
        filled = denormalize(fill_from_matrix(scaled, soft_impute(cm.values, cm.mask, sc).completed));
      }
      write_out(impute_out, [&](std::ostream& o) { write_cohort_csv(filled, o); });
    } else if (cmd == c_eval) {
      const auto methods = parse_methods(eval_methods);
      const Cohort masked = load_cohort(eval_in);
      auto ledger_in = open_in(eval_ledger);
      const auto ledger = read_ledger_csv(ledger_in);
      std::optional<MrnnModel> model;
      if (!eval_model.empty()) model = MrnnModel::from_json_text(read_text(eval_model));
      const Cohort scaled = model && model->norm ? normalize_with(masked, *model->norm) : normalize(masked);
      const auto truth = normalize_ledger(ledger, *scaled.norm);
      const double cells = static_cast<double>(masked.size() * masked.streams() * masked.length());
      ComparisonReport report;
      for (auto m : methods) {
        ReportRow row;
        row.method = method_name(m);
        row.n_segments = masked.size();
        row.seq_length = static_cast<std::size_t>(masked.length());
        row.tau = detail::format_fixed(static_cast<double>(ledger.size()) / cells, 4);
        Cohort filled;
        if (m == Method::mrnn) {
          if (!model) throw ConfigError("--model is required when --methods includes mrnn");
          filled = impute(*model, scaled);
        } else if (m == Method::spline) {
          filled = spline_impute(scaled);
        } else {
          const auto cm = cohort_to_matrix(scaled);
          SoftImputeConfig sc;
          sc.seed = seed;
          filled = fill_from_matrix(scaled, soft_impute(cm.values, cm.mask, sc).completed);
        }
        row.rmse = rmse(filled, truth);
        report.rows.push_back(row);
        out << row.method << " rmse " << detail::format_double(row.rmse) << "\n";
      }
      report.sort_canonical();
      if (model) {
        const double base = report.mean_rmse("mrnn");
        for (const auto& name : report.methods()) {
          if (name != "mrnn") report.etas.push_back({"mrnn", name, eta(base, report.mean_rmse(name))});
        }
      }
      emit_report(report, eval_report, record_runtime);
      if (!eval_eta.empty()) emit_eta(report, eval_eta);
    } else if (cmd == c_cv || cmd == c_sweep) {
      const bool is_sweep = cmd == c_sweep;
      ExperimentConfig cfg;
      cfg.mask = (is_sweep ? sw_mask : cv_mask).spec(seed);
      cfg.methods = parse_methods(is_sweep ? sw_methods : cv_methods);
      cfg.folds = is_sweep ? sw_folds : cv_folds;
      cfg.seed = seed;
      cfg.train = (is_sweep ? sw_train : cv_train).cfg;
      cfg.workers = workers;
      if (!(cfg.train.validation_fraction > 0.0 && cfg.train.validation_fraction < 1.0)) {
        throw ConfigError("--val-fraction must lie strictly between 0 and 1");
      }
      const Cohort source = (is_sweep ? sw_source : cv_source).load();
      if (is_sweep) {
        const auto axis = parse_axis(sw_axis);
        const auto report = sweep(source, axis, parse_grid(sw_grid), cfg);
        emit_report(report, sw_report, record_runtime);
        if (!sw_plot.empty()) emit_plot(report, axis_name(axis), sw_plot);
        for (double v : report.axis_values()) {
          out << axis_name(axis) << "=" << detail::format_double(v);
          for (const auto& m : report.methods()) out << " " << m << "=" << detail::format_fixed(report.mean_rmse(m, v), 6);
          out << "\n";
        }
      } else {
        const auto report = cross_validate(source, cfg);
        emit_report(report, cv_report, record_runtime);
        if (!cv_eta.empty()) emit_eta(report, cv_eta);
        for (const auto& m : report.methods()) {
          out << m << " mean_rmse " << detail::format_fixed(report.mean_rmse(m), 6) << "\n";
        }
        for (const auto& e : report.etas) {
          out << "eta " << e.method << "/" << e.vs << " " << detail::format_fixed(e.eta_pct, 2) << "%\n";
        }
      }
    } else if (cmd == c_grad) {
      SynthSpec spec{2, 2, 6, 0.05, seed};
      MaskSpec mask;
      mask.mode = BernoulliMask{0.25};
      mask.seed = seed + 1;
      const Cohort scaled = normalize(apply_mask(synthesize_cohort(spec), mask).masked);
      const auto triplets = build_triplets(scaled);
      const auto model = MrnnModel::initialize(MrnnDims{2, 2, 2}, default_delta_scale(scaled), seed);
      auto loss = [&](const nn::ParamStore& p, nn::ParamStore* g) {
        MrnnModel probe = model;
        probe.params = p;
        return total_loss(probe, triplets, g);
      };
      const auto res = nn::grad_check(loss, model.params);
      out << "max_relative_error " << detail::format_double(res.max_rel_error) << "\n"
          << "worst " << res.worst_block << "[" << res.worst_index << "]\n"
          << "coordinates " << res.coordinates << "\n";
      if (!(res.max_rel_error < 1e-4)) {
        err << "gradcheck: relative error exceeds 1e-4\n";
        return 2;
      }
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace gapfill::cli
