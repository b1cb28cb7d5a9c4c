// Command-line surface: dataset generation, training, the two-stage
// pipeline, clustering, evaluation, gradient verification, multi-seed
// aggregation and the (cbar, k) sweep.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vattn/errors.hpp"
#include "vattn/gradsuite.hpp"
#include "vattn/report.hpp"
#include "vattn/synth.hpp"
#include "vattn/trainer.hpp"

namespace {

using namespace vattn;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DegenerateDataError("cannot open file: " + path);
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

TrainConfig load_config(const std::string& path) {
    TrainConfig config;
    if (!path.empty()) {
        config = TrainConfig::from_json(read_file(path));
    }
    if (const char* env = std::getenv("VATTN_SEED")) {
        config.seed = std::strtoull(env, nullptr, 10);
    }
    return config;
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.train = load_samples(dir + "/train.bin", &ds.height, &ds.width);
    ds.test = load_samples(dir + "/test.bin");
    const std::string meta_path = dir + "/meta.json";
    if (std::filesystem::exists(meta_path)) {
        const auto meta = nlohmann::json::parse(read_file(meta_path));
        ds.domain_names = meta.at("domains").get<std::vector<std::string>>();
    } else {
        int max_label = 0;
        for (const auto& s : ds.train) {
            max_label = std::max(max_label, s.label);
        }
        for (int l = 0; l <= max_label; ++l) {
            ds.domain_names.push_back("domain" + std::to_string(l));
        }
    }
    return ds;
}

int domain_label(const Dataset& ds, const std::string& name) {
    for (std::size_t i = 0; i < ds.domain_names.size(); ++i) {
        if (ds.domain_names[i] == name) {
            return static_cast<int>(i);
        }
    }
    try {
        return std::stoi(name);
    } catch (...) {
        throw std::invalid_argument("unknown domain: " + name);
    }
}

void print_metrics(const RunReport& r) {
    std::printf("%-10s %12s %12s\n", "domain", "MAE", "MSE");
    for (std::size_t d = 0; d < r.domains.size(); ++d) {
        std::printf("%-10s %12.4f %12.4f\n", r.domains[d].c_str(), r.mae[d], r.mse[d]);
    }
}

int cmd_gen(const std::string& preset, std::uint64_t seed, const std::string& out, bool csv) {
    const auto specs = preset_by_name(preset);
    const Dataset ds = generate(specs, seed);
    std::filesystem::create_directories(out);
    save_samples(out + "/train.bin", ds.train, ds.height, ds.width);
    save_samples(out + "/test.bin", ds.test, ds.height, ds.width);
    nlohmann::json meta;
    meta["preset"] = preset;
    meta["seed"] = seed;
    meta["domains"] = ds.domain_names;
    meta["height"] = ds.height;
    meta["width"] = ds.width;
    std::ofstream(out + "/meta.json") << meta.dump(2) << "\n";
    if (csv) {
        export_dots_csv(out + "/dots_train.csv", ds.train_dots);
        export_dots_csv(out + "/dots_test.csv", ds.test_dots);
    }
    std::printf("wrote %zu train / %zu test samples to %s\n", ds.train.size(), ds.test.size(),
                out.c_str());
    return 0;
}

int cmd_train(const std::string& mode, const std::string& data_dir,
              const std::string& config_path, const std::string& out,
              const std::string& domain) {
    TrainConfig config = load_config(config_path);
    config.mode = train_mode_from_string(mode);
    Dataset ds = load_dataset(data_dir);
    if (!domain.empty()) {
        ds = filter_domain(ds, domain_label(ds, domain));
    }
    TrainResult result = train(config, ds);
    std::filesystem::create_directories(out);
    save_checkpoint(out + "/checkpoint.bin", result.checkpoint);
    write_report_files(out, result.report);
    print_metrics(result.report);
    return 0;
}

int cmd_dkpnet(const std::string& data_dir, int cbar, int k, const std::string& config_path,
               const std::string& out) {
    TrainConfig config = load_config(config_path);
    config.cbar = cbar;
    config.k = k;
    Dataset ds = load_dataset(data_dir);
    DkpnetResult result = run_dkpnet(config, ds);
    std::filesystem::create_directories(out);
    save_checkpoint(out + "/stage1.bin", result.stage1_ckpt);
    save_checkpoint(out + "/stage2.bin", result.stage2_ckpt);
    write_dkpnet_report_files(out, result);
    std::printf("stage I (VA):\n");
    print_metrics(result.stage1);
    std::printf("stage II (InVA):\n");
    print_metrics(result.stage2);
    return 0;
}

int cmd_cluster(const std::string& ckpt_path, const std::string& data_dir, int cbar,
                const std::string& backend, const std::string& out) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const TrainConfig config = TrainConfig::from_json(ckpt.config_json);
    TrainedModel tm = model_from_checkpoint(ckpt);
    Dataset ds = load_dataset(data_dir);

    ClusterConfig cc;
    cc.backend = cluster_backend_from_string(backend);
    Rng rng(mix64(config.seed, 0x434c55535445ULL));
    const auto histogram = relabel_dataset(tm.model, ds.train, cbar, rng, cc);

    int max_label = 0;
    for (const auto& s : ds.train) {
        max_label = std::max(max_label, s.label);
    }
    std::vector<std::vector<std::size_t>> contingency(max_label + 1,
                                                      std::vector<std::size_t>(cbar, 0));
    for (const auto& s : ds.train) {
        ++contingency[s.label][s.cl_label];
    }

    std::printf("%-10s", "dataset");
    for (int c = 0; c < cbar; ++c) {
        std::printf(" CL-%d", c);
    }
    std::printf("\n");
    for (std::size_t l = 0; l < contingency.size(); ++l) {
        const std::string name = l < ds.domain_names.size() ? ds.domain_names[l]
                                                            : "domain" + std::to_string(l);
        std::printf("%-10s", name.c_str());
        for (int c = 0; c < cbar; ++c) {
            std::printf(" %4zu", contingency[l][c]);
        }
        std::printf("\n");
    }

    if (!out.empty()) {
        std::filesystem::create_directories(out);
        nlohmann::json j;
        j["cluster_sizes"] = histogram;
        j["contingency"] = contingency;
        std::ofstream(out + "/cluster.json") << j.dump(2) << "\n";
        std::ofstream csv(out + "/cl_labels.csv");
        csv << "sample_index,dataset_label,cl_label\n";
        for (std::size_t i = 0; i < ds.train.size(); ++i) {
            csv << i << "," << ds.train[i].label << "," << ds.train[i].cl_label << "\n";
        }
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    TrainedModel tm = model_from_checkpoint(ckpt);
    Dataset ds = load_dataset(data_dir);
    RunReport report;
    fill_domain_metrics(tm.model, ds, report);
    print_metrics(report);
    return 0;
}

int cmd_gradcheck() {
    const auto results = run_gradient_suite();
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-20s max_rel_error=%.3e %s\n", r.name.c_str(), r.max_rel_error,
                    r.pass ? "PASS" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
        throw NumericalError("gradient verification failed");
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
    const auto cells = aggregate_runs(runs);
    if (!out.empty()) {
        write_aggregate_csv(out, cells);
    }
    std::fputs(render_comparison_table(cells).c_str(), stdout);
    return 0;
}

int cmd_sweep(const std::string& param, const std::vector<int>& values,
              const std::string& data_dir, const std::string& config_path,
              const std::string& out) {
    TrainConfig config = load_config(config_path);
    Dataset ds = load_dataset(data_dir);
    std::filesystem::create_directories(out);
    std::string csv = param + ",domain,mae,mse\n";
    for (int v : values) {
        TrainConfig c = config;
        if (param == "cbar") {
            c.cbar = v;
        } else {
            c.k = v;
        }
        DkpnetResult r = run_dkpnet(c, ds);
        std::printf("%s=%d:\n", param.c_str(), v);
        print_metrics(r.stage2);
        char line[160];
        for (std::size_t d = 0; d < r.stage2.domains.size(); ++d) {
            std::snprintf(line, sizeof(line), "%d,%s,%.6f,%.6f\n", v,
                          r.stage2.domains[d].c_str(), r.stage2.mae[d], r.stage2.mse[d]);
            csv += line;
        }
        write_dkpnet_report_files(out + "/" + param + "_" + std::to_string(v), r);
    }
    std::ofstream(out + "/sweep.csv") << csv;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"variational channel attention for multi-domain density estimation"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "generate a synthetic multi-domain dataset");
    std::string gen_preset = "three_joint";
    std::uint64_t gen_seed = 7;
    std::string gen_out = "data";
    bool gen_csv = false;
    gen->add_option("--preset", gen_preset, "three_joint or four_joint")
        ->check(CLI::IsMember({"three_joint", "four_joint"}));
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_flag("--csv", gen_csv, "also export dot coordinates as CSV");

    auto* tr = app.add_subcommand("train", "train a single-stage model");
    std::string tr_mode, tr_data, tr_config, tr_out, tr_domain;
    tr->add_option("--mode", tr_mode, "it|jt|se|va")
        ->required()
        ->check(CLI::IsMember({"it", "jt", "se", "va"}));
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--config", tr_config, "config JSON file");
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--domain", tr_domain, "restrict to one domain (for IT)");

    auto* dk = app.add_subcommand("dkpnet", "two-stage VA -> cluster -> InVA run");
    std::string dk_data, dk_config, dk_out;
    int dk_cbar = 3, dk_k = 3;
    dk->add_option("--data", dk_data, "dataset directory")->required();
    dk->add_option("--cbar", dk_cbar, "number of CL clusters");
    dk->add_option("--k", dk_k, "sub-centers per cluster");
    dk->add_option("--config", dk_config, "config JSON file");
    dk->add_option("--out", dk_out, "output directory")->required();

    auto* cl = app.add_subcommand("cluster", "CL labels + contingency from a VA checkpoint");
    std::string cl_ckpt, cl_data, cl_backend = "gmm", cl_out;
    int cl_cbar = 3;
    cl->add_option("--ckpt", cl_ckpt, "stage-I checkpoint")->required();
    cl->add_option("--data", cl_data, "dataset directory")->required();
    cl->add_option("--cbar", cl_cbar, "number of clusters");
    cl->add_option("--backend", cl_backend, "gmm or kmeans")
        ->check(CLI::IsMember({"gmm", "kmeans"}));
    cl->add_option("--out", cl_out, "output directory");

    auto* ev = app.add_subcommand("eval", "per-domain MAE/MSE of a checkpoint");
    std::string ev_ckpt, ev_data;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();

    auto* gc = app.add_subcommand("gradcheck", "run the gradient verification suite");

    auto* rp = app.add_subcommand("report", "aggregate runs into mean/std tables");
    std::vector<std::string> rp_runs;
    std::string rp_out;
    rp->add_option("--runs", rp_runs, "run directories")->required()->expected(-1);
    rp->add_option("--out", rp_out, "output directory for CSVs");

    auto* sw = app.add_subcommand("sweep", "grid over cbar or k");
    std::string sw_param, sw_data, sw_config, sw_out;
    std::vector<int> sw_values;
    sw->add_option("--param", sw_param, "cbar or k")
        ->required()
        ->check(CLI::IsMember({"cbar", "k"}));
    sw->add_option("--values", sw_values, "values to sweep")->required()->expected(-1);
    sw->add_option("--data", sw_data, "dataset directory")->required();
    sw->add_option("--config", sw_config, "config JSON file");
    sw->add_option("--out", sw_out, "output directory")->required();

    try {
        app.parse(argc, argv);
        if (gen->parsed()) {
            return cmd_gen(gen_preset, gen_seed, gen_out, gen_csv);
        }
        if (tr->parsed()) {
            return cmd_train(tr_mode, tr_data, tr_config, tr_out, tr_domain);
        }
        if (dk->parsed()) {
            return cmd_dkpnet(dk_data, dk_cbar, dk_k, dk_config, dk_out);
        }
        if (cl->parsed()) {
            return cmd_cluster(cl_ckpt, cl_data, cl_cbar, cl_backend, cl_out);
        }
        if (ev->parsed()) {
            return cmd_eval(ev_ckpt, ev_data);
        }
        if (gc->parsed()) {
            return cmd_gradcheck();
        }
        if (rp->parsed()) {
            return cmd_report(rp_runs, rp_out);
        }
        if (sw->parsed()) {
            return cmd_sweep(sw_param, sw_values, sw_data, sw_config, sw_out);
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e); // --help
        }
        std::fprintf(stderr, "vattn: error: usage: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "vattn: error: numerical: %s\n", e.what());
        return 4;
    } catch (const DegenerateDataError& e) {
        std::fprintf(stderr, "vattn: error: data: %s\n", e.what());
        return 3;
    } catch (const InvalidStateError& e) {
        std::fprintf(stderr, "vattn: error: usage: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "vattn: error: usage: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "vattn: error: internal: %s\n", e.what());
        return 1;
    }
    return 0;
}
