// hpipe: partition a hierarchical stage tree across devices, estimate and
// simulate pipeline throughput, and run the partitioned pipeline for real
// across worker processes.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "nlohmann/json.hpp"

#include "hpipe/error.hpp"
#include "hpipe/hierarchy.hpp"
#include "hpipe/kernel.hpp"
#include "hpipe/net.hpp"
#include "hpipe/partition.hpp"
#include "hpipe/rng.hpp"
#include "hpipe/runtime.hpp"
#include "hpipe/sim.hpp"
#include "hpipe/throughput.hpp"
#include "hpipe/wire.hpp"

using nlohmann::json;

namespace {

struct GlobalFlags {
    bool json_output = false;
    bool quiet = false;
    uint64_t seed = 0;
};

void write_output(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text << "\n";
        return;
    }
    std::ofstream out(out_path);
    if (!out) {
        throw hpipe::ConfigError("cannot write output file: " + out_path);
    }
    out << text << "\n";
}

std::string dump(const json& doc) { return doc.dump(2); }

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

hpipe::Partition load_partition_file(const std::string& path, int stage_count) {
    std::ifstream in(path);
    if (!in) {
        throw hpipe::ConfigError("cannot read partition file: " + path);
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw hpipe::ConfigError("malformed partition file " + path + ": " + e.what());
    }
    return hpipe::partition_from_json(doc, stage_count);
}

std::string format_fps(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string format_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_validate(const std::string& path, const GlobalFlags& flags) {
    hpipe::Hierarchy h = hpipe::Hierarchy::load(path);
    const hpipe::ValidationReport report = hpipe::validate(h);
    if (flags.json_output) {
        std::cout << dump(json{{"violations", report.violations}}) << "\n";
    } else {
        for (const auto& v : report.violations) {
            std::cout << v << "\n";
        }
    }
    return report.ok() ? 0 : 1;
}

int cmd_rates(const std::string& path, const std::string& out_path) {
    hpipe::Hierarchy h = hpipe::Hierarchy::load(path);
    const hpipe::UsageRates rates = hpipe::compute_rates(h);
    json doc = json::object();
    for (hpipe::StageId s = 0; s < h.size(); ++s) {
        doc[std::to_string(s)] = rates.of(s);
    }
    write_output(dump(json{{"rates", doc}}), out_path);
    return 0;
}

struct PartitionArgs {
    std::string hierarchy_path;
    int devices = 1;
    double frames = 1000.0;
    bool steady = false;
    bool heuristic = false;
    bool all = false;
    uint64_t budget = 10'000'000;
    std::string out_path;
    // plan emission
    std::string plan_out;
    std::string endpoints_csv;
    std::string coordinator;
    std::string kernel = "spin";
    bool overlapped = false;
    uint32_t input_bytes = 3072;
    uint32_t payload_default = 3072;
};

int cmd_partition(const PartitionArgs& args, const GlobalFlags& flags) {
    hpipe::Hierarchy h = hpipe::Hierarchy::load(args.hierarchy_path);
    const hpipe::UsageRates rates = hpipe::compute_rates(h);
    const double frames = args.steady ? hpipe::kSteadyState : args.frames;

    if (args.all) {
        const uint64_t count = hpipe::stirling_partition_count(h.size(), args.devices);
        if (count > 100000) {
            throw hpipe::DomainError("--all would dump " + std::to_string(count) +
                                     " partitions; refusing above 100000");
        }
        json all = json::array();
        hpipe::PartitionEnumerator en(h.size(), args.devices);
        while (auto p = en.next()) {
            all.push_back(hpipe::partition_to_json(
                *p, hpipe::evaluate_partition(h, rates, *p, frames)));
        }
        write_output(dump(all), args.out_path);
        return 0;
    }

    hpipe::SearchResult result;
    if (args.heuristic) {
        result = hpipe::heuristic_partition(h, rates, args.devices, frames);
    } else {
        hpipe::SearchOptions options;
        options.frames = frames;
        options.budget = args.budget;
        options.heuristic_fallback = false;  // explicit --heuristic opts in
        result = hpipe::select_best(h, rates, args.devices, options);
    }

    json doc = hpipe::partition_to_json(result.partition, result.eval);
    doc["exhaustive"] = result.exhaustive;

    if (!args.plan_out.empty()) {
        hpipe::DeploymentPlan plan;
        plan.hierarchy = h;
        plan.partition = result.partition;
        plan.endpoints = split_csv(args.endpoints_csv);
        plan.coordinator_endpoint = args.coordinator;
        plan.kernel_kind = hpipe::kernel_kind_from_string(args.kernel);
        plan.faithful = !args.overlapped;
        plan.input_bytes = args.input_bytes;
        plan.default_payload_bytes = args.payload_default;
        plan.verify();
        std::ofstream out(args.plan_out);
        if (!out) {
            throw hpipe::ConfigError("cannot write plan file: " + args.plan_out);
        }
        out << dump(plan.to_json()) << "\n";
        if (!flags.quiet) {
            std::cerr << "wrote deployment plan to " << args.plan_out << "\n";
        }
    }

    write_output(dump(doc), args.out_path);
    return 0;
}

struct EstimateArgs {
    std::string hierarchy_path;
    int devices = 1;
    double frames = 1000.0;
    std::string partition_path;
    std::string out_path;
};

int cmd_estimate(const EstimateArgs& args) {
    hpipe::Hierarchy h = hpipe::Hierarchy::load(args.hierarchy_path);
    const hpipe::UsageRates rates = hpipe::compute_rates(h);

    hpipe::Partition partition;
    hpipe::PartitionEval eval;
    if (!args.partition_path.empty()) {
        partition = load_partition_file(args.partition_path, h.size());
        eval = hpipe::evaluate_partition(h, rates, partition, args.frames);
    } else {
        hpipe::SearchOptions options;
        options.frames = args.frames;
        const auto result = hpipe::select_best(h, rates, args.devices, options);
        partition = result.partition;
        eval = result.eval;
    }

    const auto params = hpipe::params_from_partition(h, rates, eval, args.frames,
                                                     eval.devices_used);
    const double model_fps = hpipe::estimate_throughput(params);
    const double steady_fps = hpipe::steady_state_throughput(params);

    // single-device baseline for the speedup column
    hpipe::Partition single;
    single.device_count = 1;
    single.assignment.assign(static_cast<size_t>(h.size()), 0);
    const auto single_eval = hpipe::evaluate_partition(h, rates, single, hpipe::kSteadyState);
    const double single_fps = single_eval.throughput_fps;

    json doc{{"devices", eval.devices_used},
             {"frames", args.frames},
             {"bottleneck_s", eval.max_load},
             {"comm_s", eval.comm_cost},
             {"model_fps", model_fps},
             {"steady_fps", steady_fps},
             {"single_device_fps", single_fps},
             {"speedup", hpipe::speedup(steady_fps, single_fps)},
             {"partition", hpipe::partition_to_json(partition, eval)["devices"]}};
    write_output(dump(doc), args.out_path);
    return 0;
}

struct SimulateArgs {
    std::string hierarchy_path;
    int devices = 0;
    std::string partition_path;
    uint64_t frames = 1000;
    std::optional<uint64_t> seed;
    std::string mode = "faithful";
    double interval_ms = 0.0;
    std::string trace_path;
    bool summary = false;
    std::string out_path;
};

int cmd_simulate(const SimulateArgs& args, const GlobalFlags& flags) {
    hpipe::Hierarchy h = hpipe::Hierarchy::load(args.hierarchy_path);
    const hpipe::UsageRates rates = hpipe::compute_rates(h);

    hpipe::Partition partition;
    if (!args.partition_path.empty()) {
        partition = load_partition_file(args.partition_path, h.size());
    } else if (args.devices >= 1) {
        hpipe::SearchOptions options;
        options.frames = static_cast<double>(args.frames);
        partition = hpipe::select_best(h, rates, args.devices, options).partition;
    } else {
        throw hpipe::ConfigError("simulate needs --devices or --partition");
    }

    hpipe::WorkloadSpec spec;
    spec.frame_count = args.frames;
    spec.seed = args.seed.value_or(flags.seed);
    spec.arrival = args.interval_ms > 0.0
                       ? hpipe::ArrivalPolicy::every(args.interval_ms * 1e-3)
                       : hpipe::ArrivalPolicy::back_to_back();

    std::vector<hpipe::TraceEvent> trace;
    const auto mode = hpipe::sim_mode_from_string(args.mode);
    const hpipe::SimReport report =
        hpipe::simulate(h, partition, spec, mode, args.trace_path.empty() ? nullptr : &trace);

    if (!args.trace_path.empty()) {
        std::ofstream out(args.trace_path);
        if (!out) {
            throw hpipe::ConfigError("cannot write trace file: " + args.trace_path);
        }
        for (const auto& ev : trace) {
            out << json{{"time_s", ev.time_s},
                        {"event", ev.kind},
                        {"frame", ev.frame},
                        {"stage", ev.stage},
                        {"device", ev.device}}
                       .dump()
                << "\n";
        }
    }

    json doc = report.to_json(!args.summary);
    doc["mode"] = hpipe::to_string(mode);
    doc["seed"] = spec.seed;
    write_output(dump(doc), args.out_path);
    return 0;
}

struct ProfileKernelArgs {
    double latency_ms = 10.0;
    std::string kind = "spin";
    int reps = 5;
    uint32_t payload = 3072;
};

int cmd_profile_kernel(const ProfileKernelArgs& args, const std::string& out_path) {
    const hpipe::KernelCalibrator calibrator(hpipe::kernel_kind_from_string(args.kind));
    const hpipe::StageKernel kernel =
        calibrator.calibrate(args.latency_ms * 1e-3, args.payload);
    const double measured = hpipe::profile_stage(kernel, args.reps);
    write_output(dump(json{{"kind", hpipe::to_string(kernel.kind)},
                           {"target_s", kernel.target_latency_s},
                           {"measured_s", measured},
                           {"work_units", kernel.work_units},
                           {"relative_error", (measured - kernel.target_latency_s) /
                                                  kernel.target_latency_s}}),
                 out_path);
    return 0;
}

struct ProfileLinkArgs {
    std::string target;
    std::string via;
    uint32_t bytes = 1024;
    int reps = 9;
};

int cmd_profile_link(const ProfileLinkArgs& args, const std::string& out_path) {
    const double one_way = hpipe::profile_link(args.via, args.target, args.bytes, args.reps);
    write_output(dump(json{{"target", args.target},
                           {"payload_bytes", args.bytes},
                           {"repetitions", args.reps},
                           {"one_way_s", one_way}}),
                 out_path);
    return 0;
}

struct WorkerArgs {
    std::string listen;
    std::string plan_path;
    int device = -1;
};

int cmd_worker(const WorkerArgs& args, const GlobalFlags& flags) {
    const hpipe::DeploymentPlan plan = hpipe::DeploymentPlan::load(args.plan_path);
    hpipe::net::TcpListener listener(args.listen);
    hpipe::WorkerOptions options;
    options.quiet = flags.quiet;
    if (!flags.quiet) {
        std::cerr << "[worker " << args.device << "] listening on "
                  << listener.local_endpoint() << "\n";
    }
    hpipe::run_worker(std::move(listener), plan, args.device, options);
    return 0;
}

struct CoordinatorArgs {
    std::string plan_path;
    std::string hierarchy_path;
    uint64_t frames = 0;
    std::optional<uint64_t> seed;
    double interval_ms = 0.0;
    bool faithful = false;
    bool summary = false;
    double timeout_s = 30.0;
    std::string out_path;
};

int cmd_coordinator(const CoordinatorArgs& args, const GlobalFlags& flags) {
    const hpipe::DeploymentPlan plan = hpipe::DeploymentPlan::load(args.plan_path);
    const hpipe::Hierarchy h = hpipe::Hierarchy::load(args.hierarchy_path);
    if (args.faithful && !plan.faithful) {
        throw hpipe::DomainError(
            "--faithful requested but the plan was built for overlapped sends");
    }
    hpipe::WorkloadSpec spec;
    spec.frame_count = args.frames;
    spec.seed = args.seed.value_or(flags.seed);
    spec.arrival = args.interval_ms > 0.0
                       ? hpipe::ArrivalPolicy::every(args.interval_ms * 1e-3)
                       : hpipe::ArrivalPolicy::back_to_back();
    hpipe::CoordinatorOptions options;
    options.result_timeout_s = args.timeout_s;
    options.quiet = flags.quiet;
    const hpipe::RunReport report = hpipe::run_coordinator(plan, h, spec, options);
    json doc = report.to_json(!args.summary);
    doc["seed"] = spec.seed;
    write_output(dump(doc), args.out_path);
    return report.complete ? 0 : 1;
}

struct ReportArgs {
    std::string scenarios_path;
    std::string out_path;
};

int cmd_report(const ReportArgs& args, const GlobalFlags& flags) {
    std::ifstream in(args.scenarios_path);
    if (!in) {
        throw hpipe::ConfigError("cannot read scenarios file: " + args.scenarios_path);
    }
    json scenarios;
    try {
        scenarios = json::parse(in);
    } catch (const json::parse_error& e) {
        throw hpipe::ConfigError("malformed scenarios file: " + std::string(e.what()));
    }
    if (!scenarios.is_array()) {
        throw hpipe::ConfigError("scenarios file must be a JSON array");
    }

    std::ostringstream csv;
    csv << "scenario,model_fps,sim_fps,run_fps,sim_dev_pct,run_dev_pct\n";
    for (const auto& sc : scenarios) {
        const std::string name = sc.value("scenario", std::string("unnamed"));
        hpipe::Hierarchy h = hpipe::Hierarchy::load(sc.at("hierarchy").get<std::string>());
        const hpipe::UsageRates rates = hpipe::compute_rates(h);
        const int devices = sc.value("devices", 1);
        const auto frames = static_cast<double>(sc.value("frames", 1000));
        const uint64_t seed = sc.value("seed", flags.seed);

        hpipe::SearchOptions options;
        options.frames = frames;
        const auto best = hpipe::select_best(h, rates, devices, options);
        const auto params = hpipe::params_from_partition(h, rates, best.eval, frames,
                                                         best.eval.devices_used);
        const double model_fps = hpipe::estimate_throughput(params);

        hpipe::WorkloadSpec spec;
        spec.frame_count = static_cast<uint64_t>(frames);
        spec.seed = seed;
        const auto sim = hpipe::simulate(h, best.partition, spec, hpipe::SimMode::model_faithful);
        const auto dev = hpipe::compare_to_model(sim, params);

        csv << name << "," << format_fps(model_fps) << "," << format_fps(sim.throughput_fps)
            << ",";
        if (sc.contains("run_report")) {
            std::ifstream rr(sc["run_report"].get<std::string>());
            if (!rr) {
                throw hpipe::ConfigError("cannot read run report: " +
                                         sc["run_report"].get<std::string>());
            }
            const json run = json::parse(rr);
            const double run_fps = run.value("throughput_fps", 0.0);
            csv << format_fps(run_fps) << "," << format_pct(dev.throughput_rel_err) << ","
                << format_pct((run_fps - model_fps) / model_fps);
        } else {
            csv << "," << format_pct(dev.throughput_rel_err) << ",";
        }
        csv << "\n";
    }
    if (args.out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(args.out_path);
        if (!out) {
            throw hpipe::ConfigError("cannot write output file: " + args.out_path);
        }
        out << csv.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pipeline-parallel scheduling, simulation, and execution for "
                 "hierarchical stage trees"};
    app.require_subcommand(1);

    GlobalFlags flags;
    app.add_flag("--json", flags.json_output, "machine-readable output where optional");
    app.add_flag("--quiet", flags.quiet, "suppress progress logging");
    app.add_option("--seed", flags.seed, "default RNG seed for routing draws");

    // validate
    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "check a hierarchy config file");
    validate->add_option("hierarchy", validate_path, "hierarchy JSON file")->required();

    // rates
    std::string rates_path, rates_out;
    auto* rates = app.add_subcommand("rates", "per-stage usage rates");
    rates->add_option("hierarchy", rates_path)->required();
    rates->add_option("-o,--out", rates_out, "write JSON here instead of stdout");

    // partition
    PartitionArgs part;
    auto* partition = app.add_subcommand("partition", "find the best device assignment");
    partition->add_option("hierarchy", part.hierarchy_path)->required();
    partition->add_option("-n,--devices", part.devices, "device count")->required();
    partition->add_option("--frames", part.frames, "frame count for the throughput objective");
    partition->add_flag("--steady", part.steady, "optimize the steady-state limit");
    partition->add_flag("--heuristic", part.heuristic, "greedy + local search instead of exhaustive");
    partition->add_option("--budget", part.budget, "max partitions for exhaustive search");
    partition->add_flag("--all", part.all, "dump every canonical partition with its evaluation");
    partition->add_option("-o,--out", part.out_path);
    partition->add_option("--plan-out", part.plan_out, "also write a deployment plan");
    partition->add_option("--endpoints", part.endpoints_csv, "comma-separated worker endpoints");
    partition->add_option("--coordinator", part.coordinator, "coordinator endpoint for the plan");
    partition->add_option("--kernel", part.kernel, "plan kernel kind (spin|matmul)");
    partition->add_flag("--overlapped", part.overlapped, "plan workers overlap sends with compute");
    partition->add_option("--input-bytes", part.input_bytes, "injected frame payload size");
    partition->add_option("--payload-bytes", part.payload_default, "default activation size");

    // estimate
    EstimateArgs est;
    auto* estimate = app.add_subcommand("estimate", "closed-form throughput estimate");
    estimate->add_option("hierarchy", est.hierarchy_path)->required();
    estimate->add_option("-n,--devices", est.devices)->required();
    estimate->add_option("--frames", est.frames);
    estimate->add_option("--partition", est.partition_path, "evaluate this partition file");
    estimate->add_option("-o,--out", est.out_path);

    // simulate
    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "discrete-event simulation");
    simulate->add_option("hierarchy", sim.hierarchy_path)->required();
    simulate->add_option("-n,--devices", sim.devices, "devices (runs the partition search)");
    simulate->add_option("--partition", sim.partition_path, "simulate this partition file");
    simulate->add_option("--frames", sim.frames);
    uint64_t sim_seed = 0;
    auto* sim_seed_opt = simulate->add_option("--seed", sim_seed);
    simulate->add_option("--mode", sim.mode, "faithful|overlapped");
    simulate->add_option("--interval-ms", sim.interval_ms, "fixed arrival interval (0 = saturated)");
    simulate->add_option("--trace", sim.trace_path, "write the event log as NDJSON");
    simulate->add_flag("--summary", sim.summary, "omit per-frame arrays");
    simulate->add_option("-o,--out", sim.out_path);

    // profile
    auto* profile = app.add_subcommand("profile", "calibrate kernels / measure links");
    profile->require_subcommand(1);
    ProfileKernelArgs pk;
    std::string pk_out;
    auto* profile_kernel = profile->add_subcommand("kernel", "calibrate and time a stage kernel");
    profile_kernel->add_option("--latency-ms", pk.latency_ms)->required();
    profile_kernel->add_option("--kind", pk.kind);
    profile_kernel->add_option("--reps", pk.reps);
    profile_kernel->add_option("--payload", pk.payload);
    profile_kernel->add_option("-o,--out", pk_out);
    ProfileLinkArgs pl;
    std::string pl_out;
    auto* profile_link_cmd = profile->add_subcommand("link", "ping/pong transfer measurement");
    profile_link_cmd->add_option("--target", pl.target)->required();
    profile_link_cmd->add_option("--via", pl.via, "ask this worker to probe the target");
    profile_link_cmd->add_option("--bytes", pl.bytes);
    profile_link_cmd->add_option("--reps", pl.reps);
    profile_link_cmd->add_option("-o,--out", pl_out);

    // worker
    WorkerArgs worker_args;
    auto* worker = app.add_subcommand("worker", "run one device's worker process");
    worker->add_option("--listen", worker_args.listen)->required();
    worker->add_option("--plan", worker_args.plan_path)->required();
    worker->add_option("--device", worker_args.device)->required();

    // coordinator
    CoordinatorArgs coord;
    auto* coordinator = app.add_subcommand("coordinator", "drive a live run");
    coordinator->add_option("--plan", coord.plan_path)->required();
    coordinator->add_option("--hierarchy", coord.hierarchy_path)->required();
    coordinator->add_option("--frames", coord.frames)->required();
    uint64_t coord_seed = 0;
    auto* coord_seed_opt = coordinator->add_option("--seed", coord_seed);
    coordinator->add_option("--interval-ms", coord.interval_ms);
    coordinator->add_flag("--faithful", coord.faithful,
                          "require model-faithful send accounting");
    coordinator->add_flag("--summary", coord.summary, "omit per-frame arrays");
    coordinator->add_option("--timeout-s", coord.timeout_s);
    coordinator->add_option("-o,--out", coord.out_path);

    // report
    ReportArgs rep;
    auto* report = app.add_subcommand("report", "model vs simulation vs run CSV table");
    report->add_option("--scenarios", rep.scenarios_path)->required();
    report->add_option("-o,--out", rep.out_path);

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) return cmd_validate(validate_path, flags);
        if (rates->parsed()) return cmd_rates(rates_path, rates_out);
        if (partition->parsed()) return cmd_partition(part, flags);
        if (estimate->parsed()) return cmd_estimate(est);
        if (simulate->parsed()) {
            if (sim_seed_opt->count() > 0) sim.seed = sim_seed;
            return cmd_simulate(sim, flags);
        }
        if (profile->parsed()) {
            if (profile_kernel->parsed()) return cmd_profile_kernel(pk, pk_out);
            if (profile_link_cmd->parsed()) return cmd_profile_link(pl, pl_out);
        }
        if (worker->parsed()) return cmd_worker(worker_args, flags);
        if (coordinator->parsed()) {
            if (coord_seed_opt->count() > 0) coord.seed = coord_seed;
            return cmd_coordinator(coord, flags);
        }
        if (report->parsed()) return cmd_report(rep, flags);
    } catch (const hpipe::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const hpipe::SearchIncomplete& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hpipe::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const hpipe::NetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
