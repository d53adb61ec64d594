#pragma once

// Command-line front end. asl::cli::run() takes the arguments after the
// program name and returns the process exit code:
//   0 success, 1 domain/IO error (one-line diagnostic), 2 usage error.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "asl/checkpoint.hpp"
#include "asl/config.hpp"
#include "asl/container.hpp"
#include "asl/errors.hpp"
#include "asl/export.hpp"
#include "asl/kinetics.hpp"
#include "asl/manifest.hpp"
#include "asl/metrics.hpp"
#include "asl/phantom.hpp"
#include "asl/pipeline.hpp"

namespace asl::cli {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  c.train.seed = c.seed;
  if (!o.out.empty()) c.output = o.out;
  c.validate();
  return c;
}

inline std::vector<const PhantomSubject*> select_subjects(const Dataset& ds, const std::vector<std::size_t>& exclude) {
  for (auto e : exclude) {
    if (e >= ds.subjects.size()) throw InvalidParameters("cli: subject index " + std::to_string(e) + " out of range");
  }
  std::vector<const PhantomSubject*> out;
  for (const auto& s : ds.subjects) {
    if (std::find(exclude.begin(), exclude.end(), s.index) == exclude.end()) out.push_back(&s);
  }
  if (out.empty()) throw InvalidParameters("cli: no subjects left to train on");
  return out;
}

inline const PhantomSubject& find_subject(const Dataset& ds, std::size_t index) {
  for (const auto& s : ds.subjects) {
    if (s.index == index) return s;
  }
  throw InvalidParameters("cli: dataset has no subject " + std::to_string(index));
}

inline void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

inline void print_epoch(std::ostream& err, const EpochStats& e) {
  err << "epoch " << e.epoch << " train_loss " << csv_number(e.train_loss) << " validation_loss "
      << csv_number(e.validation_loss) << " (" << csv_number(e.seconds) << " s)\n";
}

// ---------------------------------------------------------------------------

inline void cmd_phantom(const CommonOptions& o, Streams io) {
  RunConfig c = resolve_config(o);
  const fs::path out = c.output;
  Dataset ds{c.acquisition, c.phantom.voxel, c.seed, generate_subjects(c.resolved_phantom(), c.seed)};
  save_dataset(out, ds);
  save_config(out / "config.json", c);
  io.out << "wrote " << ds.subjects.size() << " subjects to " << out.string() << "\n";
}

inline void cmd_train(const CommonOptions& o, const std::string& data, const std::vector<std::size_t>& exclude,
                      Streams io) {
  RunConfig c = resolve_config(o);
  const Dataset ds = load_dataset(data);
  c.acquisition = ds.acquisition;
  const fs::path out = c.output;
  const auto subjects = select_subjects(ds, exclude);
  const TrainingSet set = build_training_set(subjects, c.subsets, c.train, c.acquisition);
  io.err << set.samples.size() << " training patches, intensity scale " << csv_number(set.intensity_scale) << "\n";
  const TrainResult r = train(set, c.train, c.loss, [&](const EpochStats& e) { print_epoch(io.err, e); });
  save_checkpoint(out / "checkpoint", {r.weights, r.lambda, r.intensity_scale, c.acquisition});
  write_text(out / "loss_history.csv", loss_history_csv(r.history));
  save_config(out / "config.json", c);
  io.out << "wrote checkpoint to " << (out / "checkpoint").string() << "\n";
}

inline void cmd_denoise(const CommonOptions& o, const std::string& data, const std::string& checkpoint,
                        double fraction, const std::vector<std::size_t>& only, Streams io) {
  RunConfig c = resolve_config(o);
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidParameters("cli: fraction must lie in (0, 1]");
  const Dataset ds = load_dataset(data);
  const Checkpoint ck = load_checkpoint(checkpoint);
  const fs::path out = c.output;
  Json subjects = Json::array();
  for (const auto& subj : ds.subjects) {
    if (!only.empty() && std::find(only.begin(), only.end(), subj.index) == only.end()) continue;
    const std::string sdir = detail::indexed_name("subject_", subj.index, 3);
    Json slices = Json::array();
    for (std::size_t k = 0; k < subj.slices.size(); ++k) {
      Rng rng = make_stream(c.seed, "cli.denoise", {subj.index, k});
      const Image2D avg = average_subset(subj.slices[k].repetitions, fraction, rng);
      const auto t0 = std::chrono::steady_clock::now();
      const DenoiseResult d = denoise_with_residual(ck.weights, ck.intensity_scale, avg);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      io.out << "subject " << subj.index << " slice " << k << ": " << csv_number(ms) << " ms\n";
      const std::string rel = sdir + "/" + detail::indexed_name("slice_", k, 2);
      Json files;
      files["dm_average"] = detail::file_entry(out, rel + "/dm_average.aslt", to_container(avg));
      files["dm_denoised"] = detail::file_entry(out, rel + "/dm_denoised.aslt", to_container(d.denoised));
      files["noise_estimate"] = detail::file_entry(out, rel + "/noise_estimate.aslt", to_container(d.residual));
      slices.push_back({{"index", k}, {"files", files}});
    }
    subjects.push_back({{"subject", subj.index}, {"slices", slices}});
  }
  Json m = {{"version", kManifestVersion}, {"fraction", fraction}, {"subjects", subjects}};
  write_text(out / "denoised.json", dump_json(m));
  save_config(out / "config.json", c);
}

inline void cmd_quantify(const CommonOptions& o, const std::string& input, const std::string& si_pd_path,
                         const std::string& mask_path, Streams io) {
  RunConfig c = resolve_config(o);
  const fs::path out = c.output;
  const Image2D dm = image_from_container(load_tensor(input));
  const Image2D pd = image_from_container(load_tensor(si_pd_path));
  Image2D mask(pd.width(), pd.height());
  if (mask_path.empty()) {
    for (std::size_t i = 0; i < pd.size(); ++i) mask[i] = pd[i] > 0.0 ? 1.0 : 0.0;
  } else {
    mask = image_from_container(load_tensor(mask_path));
  }
  const Image2D cbf = quantify_cbf(dm, scale_map(c.acquisition, pd, mask));
  save_tensor(out / "cbf.aslt", to_container(cbf));
  save_config(out / "config.json", c);
  io.out << "K = " << csv_number(kinetic_constant(c.acquisition)) << ", wrote " << (out / "cbf.aslt").string() << "\n";
}

inline void cmd_evaluate(const CommonOptions& o, const std::string& data, Streams io) {
  RunConfig c = resolve_config(o);
  std::vector<PhantomSubject> subjects;
  if (data.empty()) {
    subjects = generate_subjects(c.resolved_phantom(), c.seed);
  } else {
    Dataset ds = load_dataset(data);
    c.acquisition = ds.acquisition;
    subjects = std::move(ds.subjects);
  }
  const fs::path out = c.output;
  const ExperimentConfig exp = c.experiment();
  const LooResult r = leave_one_out(
      subjects, exp,
      [&](const FoldResult& f) {
        const fs::path dir = out / detail::indexed_name("fold_", f.held_out, 2);
        save_checkpoint(dir / "checkpoint",
                        {f.training.weights, f.training.lambda, f.training.intensity_scale, c.acquisition});
        write_text(dir / "loss_history.csv", loss_history_csv(f.training.history));
        for (const auto& row : f.rows) {
          io.err << "fold " << f.held_out << " fraction " << csv_number(row.fraction) << " " << row.method
                 << ": psnr " << csv_number(row.psnr) << " dB, cbf rmse " << csv_number(row.rmse) << "\n";
        }
      },
      c.folds);
  write_text(out / "metrics.csv", metrics_csv(r.report.rows));
  write_text(out / "summary.csv", summary_csv(r.report.summary));
  Json folds = Json::array();
  for (const auto& f : r.folds) folds.push_back(f.held_out);
  const Json meta = {{"version", kManifestVersion},
                     {"psnr_peak", r.report.psnr_peak},
                     {"ccc_moments", "population"},
                     {"bland_altman_sd", "sample"},
                     {"metrics_mask", "phantom brain mask, all slices pooled"},
                     {"folds", folds},
                     {"rows", r.report.rows.size()}};
  write_text(out / "report.json", dump_json(meta));
  save_config(out / "config.json", c);
  io.out << "wrote " << r.report.rows.size() << " metric rows to " << (out / "metrics.csv").string() << "\n";
}

inline void cmd_report(const CommonOptions& o, const std::string& data, const std::string& checkpoint,
                       std::size_t subject_index, std::size_t slice_index, std::optional<double> fraction_opt,
                       Streams io) {
  RunConfig c = resolve_config(o);
  const Dataset ds = load_dataset(data);
  c.acquisition = ds.acquisition;
  const Checkpoint ck = load_checkpoint(checkpoint);
  const PhantomSubject& subj = find_subject(ds, subject_index);
  if (slice_index >= subj.slices.size()) throw InvalidParameters("cli: slice index out of range");
  const double fraction = fraction_opt.value_or(c.subsets.fractions.front());
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidParameters("cli: fraction must lie in (0, 1]");
  const fs::path out = c.output;

  std::vector<double> ref, avg, den;
  for (std::size_t k = 0; k < subj.slices.size(); ++k) {
    const PhantomSlice& sl = subj.slices[k];
    const SliceReference sr = slice_reference(sl, c.acquisition);
    Rng rng = make_stream(c.seed, "cli.report", {subj.index, k});
    const DenoisedSlice d = denoise_slice(ck.weights, ck.intensity_scale, sl, sr, fraction, rng);
    const Image2D& mask = sl.tissue.mask;
    for (auto [dst, img] : {std::pair{&ref, &sr.cbf_ref}, {&avg, &d.cbf_noisy}, {&den, &d.cbf_denoised}}) {
      const auto v = masked_values(*img, mask);
      dst->insert(dst->end(), v.begin(), v.end());
    }
    if (k != slice_index) continue;
    double dm_hi = 0.0, cbf_hi = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!in_mask(mask, i)) continue;
      dm_hi = std::max(dm_hi, sr.dm_complete[i]);
      cbf_hi = std::max(cbf_hi, sr.cbf_ref[i]);
    }
    if (!(dm_hi > 0.0) || !(cbf_hi > 0.0)) throw InvalidParameters("cli: reference slice has no positive signal");
    const Window dmw{0.0, dm_hi}, cbfw{0.0, cbf_hi};
    export_pgm(d.dm_noisy, out / "dm_subset_average.pgm", dmw);
    export_pgm(sr.dm_complete, out / "dm_complete_average.pgm", dmw);
    export_pgm(d.dm_denoised, out / "dm_denoised.pgm", dmw);
    export_pgm(d.cbf_noisy, out / "cbf_subset_average.pgm", cbfw);
    export_pgm(d.cbf_denoised, out / "cbf_denoised.pgm", cbfw);
    export_pgm(sr.cbf_ref, out / "cbf_reference.pgm", cbfw);
    export_pgm(sl.cbf_truth, out / "cbf_truth.pgm", cbfw);
  }
  write_text(out / "bland_altman_averaging.csv", bland_altman_points_csv(ref, avg));
  write_text(out / "bland_altman_proposed.csv", bland_altman_points_csv(ref, den));
  const std::vector<BlandAltmanEntry> entries = {{kMethodAveraging, bland_altman(ref, avg)},
                                                 {kMethodProposed, bland_altman(ref, den)}};
  write_text(out / "bland_altman_summary.csv", bland_altman_summary_csv(entries));
  save_config(out / "config.json", c);
  io.out << "wrote report panels to " << out.string() << "\n";
}

// ---------------------------------------------------------------------------

inline void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "run configuration (JSON)");
  sub->add_option("--seed", o.seed, "master seed (overrides the config)");
  sub->add_option("--out", o.out, "output directory (overrides the config)");
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Residual-learning ASL denoiser with kinetic-model loss", "asl_denoise"};
  app.require_subcommand(1);
  app.fallthrough(false);

  CommonOptions common;
  std::string data, checkpoint, input, si_pd, mask;
  std::vector<std::size_t> exclude, subjects;
  double fraction = 0.2;
  std::optional<double> report_fraction;
  std::size_t subject = 0, slice = 0;

  auto* phantom = app.add_subcommand("phantom", "synthesize phantom subjects and write their manifests");
  add_common(phantom, common);

  auto* trn = app.add_subcommand("train", "train the denoiser on a phantom dataset");
  add_common(trn, common);
  trn->add_option("--data", data, "dataset directory")->required();
  trn->add_option("--exclude", exclude, "subject indices left out of training");

  auto* den = app.add_subcommand("denoise", "denoise subset averages with a checkpoint");
  add_common(den, common);
  den->add_option("--data", data, "dataset directory")->required();
  den->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  den->add_option("--fraction", fraction, "subset fraction in (0, 1]")->required();
  den->add_option("--subject", subjects, "restrict to these subject indices");

  auto* qnt = app.add_subcommand("quantify", "convert a perfusion-weighted image to CBF");
  add_common(qnt, common);
  qnt->add_option("--input", input, "perfusion-weighted image container")->required();
  qnt->add_option("--si-pd", si_pd, "proton-density image container")->required();
  qnt->add_option("--mask", mask, "brain mask container (default: SI_PD > 0)");

  auto* evl = app.add_subcommand("evaluate", "leave-one-subject-out training and evaluation");
  add_common(evl, common);
  evl->add_option("--data", data, "dataset directory (default: synthesize from the config)");

  auto* rep = app.add_subcommand("report", "image panels and Bland-Altman tables for one subject");
  add_common(rep, common);
  rep->add_option("--data", data, "dataset directory")->required();
  rep->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  rep->add_option("--subject", subject, "subject index");
  rep->add_option("--slice", slice, "slice shown in the image panels");
  rep->add_option("--fraction", report_fraction, "subset fraction (default: first configured)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "asl_denoise: " << e.what() << "\n" << app.help();
    return 2;
  }

  const Streams io{out, err};
  try {
    if (phantom->parsed()) cmd_phantom(common, io);
    if (trn->parsed()) cmd_train(common, data, exclude, io);
    if (den->parsed()) cmd_denoise(common, data, checkpoint, fraction, subjects, io);
    if (qnt->parsed()) cmd_quantify(common, input, si_pd, mask, io);
    if (evl->parsed()) cmd_evaluate(common, data, io);
    if (rep->parsed()) cmd_report(common, data, checkpoint, subject, slice, report_fraction, io);
  } catch (const std::exception& e) {
    err << "asl_denoise: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace asl::cli
