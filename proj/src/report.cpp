#include "vattn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vattn/errors.hpp"

namespace vattn {

namespace {

using nlohmann::json;

json subdomain_to_json(const SubdomainReport& sub) {
    json j;
    j["cosine"] = sub.cosine;
    j["counts"] = sub.counts;
    return j;
}

SubdomainReport subdomain_from_json(const json& j) {
    SubdomainReport sub;
    sub.cosine = j.at("cosine").get<std::vector<std::vector<std::vector<double>>>>();
    sub.counts = j.at("counts").get<std::vector<std::vector<std::size_t>>>();
    return sub;
}

json report_to_json_obj(const RunReport& r) {
    json j;
    j["mode"] = r.mode;
    j["config"] = json::parse(r.config_json.empty() ? "{}" : r.config_json);
    j["seed"] = r.seed;
    j["wall_clock_sec"] = r.wall_clock_sec;
    j["timestamp"] = r.timestamp;
    j["domains"] = r.domains;
    j["mae"] = r.mae;
    j["mse"] = r.mse;
    j["trace_total"] = r.trace_total;
    j["trace_density"] = r.trace_density;
    j["trace_kl"] = r.trace_kl;
    j["trace_lse"] = r.trace_lse;
    j["trace_det"] = r.trace_det;
    if (r.has_silhouette) {
        j["silhouette_by_domain"] = r.silhouette_by_domain;
    }
    if (!r.contingency.empty()) {
        j["contingency"] = r.contingency;
    }
    if (!r.cluster_sizes.empty()) {
        j["cluster_sizes"] = r.cluster_sizes;
    }
    if (r.has_subdomain) {
        j["subdomain"] = subdomain_to_json(r.subdomain);
    }
    return j;
}

RunReport report_from_json_obj(const json& j) {
    RunReport r;
    r.mode = j.at("mode").get<std::string>();
    r.config_json = j.at("config").dump(2);
    r.seed = j.at("seed").get<std::uint64_t>();
    r.wall_clock_sec = j.at("wall_clock_sec").get<double>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.domains = j.at("domains").get<std::vector<std::string>>();
    r.mae = j.at("mae").get<std::vector<double>>();
    r.mse = j.at("mse").get<std::vector<double>>();
    r.trace_total = j.at("trace_total").get<std::vector<double>>();
    r.trace_density = j.at("trace_density").get<std::vector<double>>();
    r.trace_kl = j.at("trace_kl").get<std::vector<double>>();
    r.trace_lse = j.at("trace_lse").get<std::vector<double>>();
    r.trace_det = j.at("trace_det").get<std::vector<double>>();
    if (j.contains("silhouette_by_domain")) {
        r.has_silhouette = true;
        r.silhouette_by_domain = j.at("silhouette_by_domain").get<double>();
    }
    if (j.contains("contingency")) {
        r.contingency = j.at("contingency").get<std::vector<std::vector<std::size_t>>>();
    }
    if (j.contains("cluster_sizes")) {
        r.cluster_sizes = j.at("cluster_sizes").get<std::vector<std::size_t>>();
    }
    if (j.contains("subdomain")) {
        r.has_subdomain = true;
        r.subdomain = subdomain_from_json(j.at("subdomain"));
    }
    return r;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DegenerateDataError("cannot open for writing: " + path);
    }
    out << text;
}

void write_loss_trace_csv(const std::string& path, const RunReport& r) {
    std::string text = "epoch,total,density,kl,lse,det\n";
    char line[200];
    for (std::size_t e = 0; e < r.trace_total.size(); ++e) {
        std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", e,
                      r.trace_total[e], r.trace_density[e], r.trace_kl[e], r.trace_lse[e],
                      r.trace_det[e]);
        text += line;
    }
    write_text(path, text);
}

void write_metrics_csv(const std::string& path, const RunReport& r) {
    std::string text = "domain,mae,mse\n";
    char line[160];
    for (std::size_t d = 0; d < r.domains.size(); ++d) {
        std::snprintf(line, sizeof(line), "%s,%.6f,%.6f\n", r.domains[d].c_str(), r.mae[d],
                      r.mse[d]);
        text += line;
    }
    write_text(path, text);
}

} // namespace

std::string report_to_json(const RunReport& report) {
    return report_to_json_obj(report).dump(2) + "\n";
}

RunReport report_from_json(const std::string& text) {
    try {
        return report_from_json_obj(json::parse(text));
    } catch (const json::exception& e) {
        throw DegenerateDataError(std::string("report: invalid JSON: ") + e.what());
    }
}

void write_report_files(const std::string& dir, const RunReport& report) {
    std::filesystem::create_directories(dir);
    write_text(dir + "/report.json", report_to_json(report));
    write_loss_trace_csv(dir + "/loss_trace.csv", report);
    write_metrics_csv(dir + "/metrics.csv", report);
}

std::string dkpnet_report_to_json(const DkpnetResult& result) {
    json j;
    j["kind"] = "dkpnet";
    j["stage1"] = report_to_json_obj(result.stage1);
    j["stage2"] = report_to_json_obj(result.stage2);
    j["contingency"] = result.contingency;
    j["cluster_sizes"] = result.cluster_sizes;
    return j.dump(2) + "\n";
}

void write_dkpnet_report_files(const std::string& dir, const DkpnetResult& result) {
    std::filesystem::create_directories(dir);
    write_text(dir + "/report.json", dkpnet_report_to_json(result));
    write_loss_trace_csv(dir + "/stage1_loss_trace.csv", result.stage1);
    write_loss_trace_csv(dir + "/stage2_loss_trace.csv", result.stage2);
    write_metrics_csv(dir + "/stage1_metrics.csv", result.stage1);
    write_metrics_csv(dir + "/stage2_metrics.csv", result.stage2);
}

namespace {

void add_report(std::vector<AggregateCell>& cells, const std::string& mode,
                const RunReport& r) {
    for (std::size_t d = 0; d < r.domains.size(); ++d) {
        auto it = std::find_if(cells.begin(), cells.end(), [&](const AggregateCell& c) {
            return c.mode == mode && c.domain == r.domains[d];
        });
        if (it == cells.end()) {
            cells.push_back(AggregateCell{mode, r.domains[d], {}, {}, 0, 0, 0, 0});
            it = cells.end() - 1;
        }
        it->mae.push_back(r.mae[d]);
        it->mse.push_back(r.mse[d]);
    }
}

void finalise(AggregateCell& c) {
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        for (double x : v) {
            mean += x;
        }
        mean /= static_cast<double>(v.size());
        double acc = 0.0;
        for (double x : v) {
            acc += (x - mean) * (x - mean);
        }
        sd = v.size() > 1 ? std::sqrt(acc / static_cast<double>(v.size() - 1)) : 0.0;
    };
    mean_std(c.mae, c.mean_mae, c.std_mae);
    mean_std(c.mse, c.mean_mse, c.std_mse);
}

} // namespace

std::vector<AggregateCell> aggregate_runs(const std::vector<std::string>& run_dirs) {
    std::vector<AggregateCell> cells;
    for (const auto& dir : run_dirs) {
        const std::string path = dir + "/report.json";
        std::ifstream in(path);
        if (!in) {
            throw DegenerateDataError("missing report: " + path);
        }
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw DegenerateDataError("bad report " + path + ": " + e.what());
        }
        if (j.contains("kind") && j.at("kind") == "dkpnet") {
            add_report(cells, "va", report_from_json_obj(j.at("stage1")));
            add_report(cells, "inva", report_from_json_obj(j.at("stage2")));
        } else {
            const RunReport r = report_from_json_obj(j);
            add_report(cells, r.mode, r);
        }
    }
    for (auto& c : cells) {
        finalise(c);
    }
    return cells;
}

void write_aggregate_csv(const std::string& dir, const std::vector<AggregateCell>& cells) {
    std::filesystem::create_directories(dir);
    std::string text = "mode,domain,n,mean_mae,std_mae,mean_mse,std_mse\n";
    char line[240];
    for (const auto& c : cells) {
        std::snprintf(line, sizeof(line), "%s,%s,%zu,%.6f,%.6f,%.6f,%.6f\n", c.mode.c_str(),
                      c.domain.c_str(), c.mae.size(), c.mean_mae, c.std_mae, c.mean_mse,
                      c.std_mse);
        text += line;
    }
    write_text(dir + "/summary.csv", text);
    write_text(dir + "/comparison.csv", render_comparison_table(cells));
}

std::string render_comparison_table(const std::vector<AggregateCell>& cells) {
    // rows in the paper's table order, columns in first-appearance order
    const std::vector<std::string> mode_order = {"it", "jt", "se", "va", "inva"};
    std::vector<std::string> domains;
    for (const auto& c : cells) {
        if (std::find(domains.begin(), domains.end(), c.domain) == domains.end()) {
            domains.push_back(c.domain);
        }
    }
    std::string text = "mode";
    for (const auto& d : domains) {
        text += "," + d;
    }
    text += "\n";
    for (const auto& mode : mode_order) {
        bool any = false;
        for (const auto& c : cells) {
            if (c.mode == mode) {
                any = true;
                break;
            }
        }
        if (!any) {
            continue;
        }
        text += mode;
        for (const auto& d : domains) {
            auto it = std::find_if(cells.begin(), cells.end(), [&](const AggregateCell& c) {
                return c.mode == mode && c.domain == d;
            });
            char cell[80];
            if (it != cells.end()) {
                std::snprintf(cell, sizeof(cell), ",%.3f+-%.3f", it->mean_mae, it->std_mae);
            } else {
                std::snprintf(cell, sizeof(cell), ",-");
            }
            text += cell;
        }
        text += "\n";
    }
    return text;
}

} // namespace vattn
