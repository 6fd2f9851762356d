#include "hpipe/runtime.hpp"

#include <sys/socket.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "hpipe/error.hpp"
#include "hpipe/rng.hpp"
#include "hpipe/wire.hpp"

namespace hpipe {

using nlohmann::json;
using wire::Message;
using wire::MsgType;

// ---------------------------------------------------------------------------
// DeploymentPlan

uint32_t DeploymentPlan::payload_of(StageId s) const {
    auto it = payload_bytes.find(s);
    return it != payload_bytes.end() ? it->second : default_payload_bytes;
}

void DeploymentPlan::verify() const {
    require_valid(hierarchy);
    if (static_cast<int>(partition.assignment.size()) != hierarchy.size()) {
        throw ConfigError("plan partition does not cover the hierarchy");
    }
    if (static_cast<int>(endpoints.size()) != partition.device_count) {
        throw ConfigError("plan lists " + std::to_string(endpoints.size()) + " endpoints for " +
                          std::to_string(partition.device_count) + " devices");
    }
    for (int d : partition.assignment) {
        if (d < 0 || d >= partition.device_count) {
            throw ConfigError("plan assigns a stage to a device without an endpoint");
        }
    }
    if (coordinator_endpoint.empty()) {
        throw ConfigError("plan requires a coordinator endpoint");
    }
}

DeploymentPlan DeploymentPlan::from_json(const json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("deployment plan must be a JSON object");
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        static const char* known[] = {"hierarchy", "devices",    "endpoints",
                                      "coordinator", "kernel",   "faithful",
                                      "input_bytes", "payload_bytes"};
        if (std::find_if(std::begin(known), std::end(known),
                         [&](const char* k) { return it.key() == k; }) == std::end(known)) {
            throw ConfigError("unknown key \"" + it.key() + "\" in deployment plan");
        }
    }
    DeploymentPlan plan;
    if (!doc.contains("hierarchy")) {
        throw ConfigError("plan requires an embedded \"hierarchy\"");
    }
    plan.hierarchy = Hierarchy::from_json(doc["hierarchy"]);
    if (!doc.contains("devices")) {
        throw ConfigError("plan requires a \"devices\" partition");
    }
    plan.partition = partition_from_json(json{{"devices", doc["devices"]}}, plan.hierarchy.size());
    if (!doc.contains("endpoints") || !doc["endpoints"].is_array()) {
        throw ConfigError("plan requires an \"endpoints\" array");
    }
    for (const auto& e : doc["endpoints"]) plan.endpoints.push_back(e.get<std::string>());
    plan.partition.device_count = static_cast<int>(plan.endpoints.size());
    plan.coordinator_endpoint = doc.value("coordinator", std::string{});
    if (doc.contains("kernel")) {
        plan.kernel_kind = kernel_kind_from_string(doc["kernel"].get<std::string>());
    }
    plan.faithful = doc.value("faithful", true);
    plan.input_bytes = doc.value("input_bytes", 3072u);
    if (doc.contains("payload_bytes")) {
        const auto& pb = doc["payload_bytes"];
        plan.default_payload_bytes = pb.value("default", 3072u);
        if (pb.contains("per_stage")) {
            for (auto it = pb["per_stage"].begin(); it != pb["per_stage"].end(); ++it) {
                plan.payload_bytes[std::stoi(it.key())] = it.value().get<uint32_t>();
            }
        }
    }
    plan.verify();
    return plan;
}

DeploymentPlan DeploymentPlan::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read plan file: " + path);
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("malformed plan file " + path + ": " + e.what());
    }
    return from_json(doc);
}

json DeploymentPlan::to_json() const {
    std::vector<std::vector<StageId>> devices(static_cast<size_t>(partition.device_count));
    for (StageId s = 0; s < static_cast<StageId>(partition.assignment.size()); ++s) {
        devices[static_cast<size_t>(partition.device_of(s))].push_back(s);
    }
    json doc{{"hierarchy", hierarchy.to_json()},
             {"devices", devices},
             {"endpoints", endpoints},
             {"coordinator", coordinator_endpoint},
             {"kernel", to_string(kernel_kind)},
             {"faithful", faithful},
             {"input_bytes", input_bytes}};
    json pb{{"default", default_payload_bytes}};
    if (!payload_bytes.empty()) {
        json per = json::object();
        for (const auto& [s, b] : payload_bytes) per[std::to_string(s)] = b;
        pb["per_stage"] = per;
    }
    doc["payload_bytes"] = pb;
    return doc;
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

struct DurationStats {
    uint64_t count = 0;
    double total_s = 0.0;
    std::vector<double> samples;

    void record(double s) {
        ++count;
        total_s += s;
        samples.push_back(s);
    }
    json to_json() const {
        json j{{"count", count}, {"mean_s", count ? total_s / static_cast<double>(count) : 0.0}};
        j["median_s"] = samples.empty() ? 0.0 : median_of(samples);
        return j;
    }
};

double seconds_since(uint64_t start_ns) {
    return static_cast<double>(net::monotonic_ns() - start_ns) * 1e-9;
}

// One echo round trip; payload tag 0 marks a plain echo request.
double echo_round_trip(net::TcpStream& stream, const std::vector<uint8_t>& payload) {
    Message ping;
    ping.type = MsgType::profile_ping;
    ping.timestamp_ns = net::monotonic_ns();
    ping.payload = payload;
    const uint64_t t0 = net::monotonic_ns();
    stream.send_message(ping);
    const auto pong = stream.read_message();
    if (!pong || pong->type != MsgType::profile_pong) {
        throw NetError("expected profile pong");
    }
    return seconds_since(t0);
}

double direct_link_probe(const std::string& target, uint32_t payload_bytes, int repetitions,
                         const net::RetryPolicy& retry) {
    net::TcpStream stream = net::TcpStream::connect_with_retry(target, retry);
    std::vector<uint8_t> payload(1 + payload_bytes, 0);
    payload[0] = 0;  // echo tag
    echo_round_trip(stream, payload);  // warm-up excluded
    std::vector<double> rtts;
    rtts.reserve(static_cast<size_t>(repetitions));
    for (int i = 0; i < repetitions; ++i) {
        rtts.push_back(echo_round_trip(stream, payload));
    }
    return median_of(std::move(rtts)) / 2.0;
}

constexpr uint8_t kProbeTagEcho = 0;
constexpr uint8_t kProbeTagRelay = 1;

}  // namespace

// ---------------------------------------------------------------------------
// Worker

namespace {

class Worker {
  public:
    Worker(net::TcpListener listener, const DeploymentPlan& plan, int device,
           const WorkerOptions& options)
        : listener_(std::move(listener)), plan_(plan), device_(device), options_(options) {
        plan_.verify();
        if (device_ < 0 || device_ >= plan_.partition.device_count) {
            throw ConfigError("device index " + std::to_string(device_) + " outside the plan");
        }
        for (const auto& path : root_leaf_paths(plan_.hierarchy)) {
            for (size_t i = 0; i + 1 < path.size(); ++i) {
                next_on_path_[{path[i], path.back()}] = path[i + 1];
            }
        }
    }

    void run() {
        calibrate_kernels();
        connect_coordinator();
        connect_peers();
        accept_thread_ = std::thread([this] { accept_loop(); });

        std::exception_ptr pending;
        try {
            process_work();
        } catch (...) {
            pending = std::current_exception();
        }
        stop_threads();
        if (pending) std::rethrow_exception(pending);
        if (!fatal_.empty()) {
            throw NetError("worker " + std::to_string(device_) + " aborted: " + fatal_);
        }
    }

  private:
    struct PeerLink {
        std::string endpoint;
        net::TcpStream stream;
        std::thread sender;
        std::deque<Message> outq;
        std::mutex mu;
        std::condition_variable cv;
        bool closing = false;
    };

    void log(const std::string& msg) {
        if (!options_.quiet) {
            std::cerr << "[worker " << device_ << "] " << msg << "\n";
        }
    }

    void calibrate_kernels() {
        const KernelCalibrator calibrator(plan_.kernel_kind);
        for (StageId s = 0; s < plan_.hierarchy.size(); ++s) {
            if (plan_.device_of(s) != device_) continue;
            kernels_[s] = calibrator.calibrate(plan_.hierarchy.stage(s).latency_s,
                                               plan_.payload_of(s));
            log("calibrated stage " + std::to_string(s) + " to " +
                std::to_string(plan_.hierarchy.stage(s).latency_s * 1e3) + " ms (" +
                std::to_string(kernels_[s].work_units) + " units)");
        }
    }

    void connect_coordinator() {
        coordinator_ = net::TcpStream::connect_with_retry(plan_.coordinator_endpoint,
                                                          options_.retry);
    }

    void connect_peers() {
        // one outbound connection per device this one forwards to
        const auto parents = parent_map(plan_.hierarchy);
        for (StageId s = 0; s < plan_.hierarchy.size(); ++s) {
            const StageId p = parents[static_cast<size_t>(s)];
            if (p < 0) continue;
            if (plan_.device_of(p) != device_) continue;
            const int target = plan_.device_of(s);
            if (target == device_ || peers_.count(target)) continue;
            auto link = std::make_unique<PeerLink>();
            link->endpoint = plan_.endpoints[static_cast<size_t>(target)];
            link->stream = net::TcpStream::connect_with_retry(link->endpoint, options_.retry);
            if (!plan_.faithful) {
                PeerLink* raw = link.get();
                link->sender = std::thread([this, raw] { sender_loop(raw); });
            }
            peers_.emplace(target, std::move(link));
        }
    }

    void accept_loop() {
        while (!stopping_) {
            net::TcpStream stream;
            try {
                stream = listener_.accept();
            } catch (const NetError&) {
                break;  // listener closed during shutdown
            }
            std::lock_guard lock(readers_mu_);
            inbound_fds_.push_back(stream.fd());
            reader_threads_.emplace_back(
                [this](net::TcpStream s) { reader_loop(std::move(s)); }, std::move(stream));
        }
    }

    void reader_loop(net::TcpStream stream) {
        try {
            while (true) {
                auto msg = stream.read_message();
                if (!msg) {
                    return;  // peer closed between messages
                }
                switch (msg->type) {
                    case MsgType::frame:
                        enqueue_work(std::move(*msg));
                        break;
                    case MsgType::shutdown:
                        enqueue_work(std::move(*msg));
                        return;
                    case MsgType::profile_ping:
                        handle_ping(stream, *msg);
                        break;
                    default:
                        fail("unexpected message type " +
                             std::to_string(static_cast<int>(msg->type)));
                        return;
                }
            }
        } catch (const NetError& e) {
            if (!stopping_) {
                fail(e.what());
            }
        }
    }

    void handle_ping(net::TcpStream& stream, const Message& ping) {
        Message pong;
        pong.type = MsgType::profile_pong;
        pong.frame_id = ping.frame_id;
        pong.timestamp_ns = net::monotonic_ns();
        if (ping.payload.empty() || ping.payload[0] == kProbeTagEcho) {
            pong.payload = ping.payload;
            stream.send_message(pong);
            return;
        }
        if (ping.payload[0] != kProbeTagRelay || ping.payload.size() < 3) {
            fail("malformed profile ping");
            return;
        }
        // relay probe: [1][u16 len][endpoint][u32 payload_bytes][u32 reps]
        const uint8_t* p = ping.payload.data();
        const uint16_t len = wire::get_u16(p + 1);
        if (ping.payload.size() < 3u + len + 8u) {
            fail("malformed relay probe");
            return;
        }
        const std::string target(reinterpret_cast<const char*>(p + 3), len);
        const uint32_t bytes = wire::get_u32(p + 3 + len);
        const uint32_t reps = wire::get_u32(p + 7 + len);
        double one_way = 0.0;
        try {
            one_way = direct_link_probe(target, bytes, static_cast<int>(reps), options_.retry);
        } catch (const NetError& e) {
            fail(std::string("relay probe failed: ") + e.what());
            return;
        }
        pong.payload.push_back(kProbeTagRelay);
        wire::put_u64(pong.payload, static_cast<uint64_t>(one_way * 1e9));
        stream.send_message(pong);
    }

    void enqueue_work(Message msg) {
        std::lock_guard lock(work_mu_);
        work_.push_back(std::move(msg));
        work_cv_.notify_one();
    }

    void fail(const std::string& why) {
        {
            std::lock_guard lock(work_mu_);
            if (fatal_.empty()) fatal_ = why;
        }
        work_cv_.notify_all();
    }

    void process_work() {
        while (true) {
            Message msg;
            {
                std::unique_lock lock(work_mu_);
                work_cv_.wait(lock, [this] { return !work_.empty() || !fatal_.empty(); });
                if (!fatal_.empty()) return;
                msg = std::move(work_.front());
                work_.pop_front();
            }
            if (msg.type == MsgType::shutdown) {
                send_metrics();
                return;
            }
            handle_frame(msg);
        }
    }

    void handle_frame(const Message& msg) {
        StageId s = static_cast<StageId>(msg.stage_id);
        const StageId leaf = static_cast<StageId>(msg.routed_leaf);
        if (!kernels_.count(s)) {
            fail("received frame for stage " + std::to_string(s) + " not owned by this device");
            return;
        }
        ++frames_processed_;
        while (true) {
            const uint64_t t0 = net::monotonic_ns();
            kernels_.at(s).execute();
            const double exec_s = seconds_since(t0);
            busy_s_ += exec_s;
            stage_exec_[s].record(exec_s);

            if (s == leaf) {
                Message result;
                result.type = MsgType::result;
                result.frame_id = msg.frame_id;
                result.stage_id = static_cast<uint16_t>(s);
                result.timestamp_ns = net::monotonic_ns();
                send_to_coordinator(result);
                ++results_;
                return;
            }
            const StageId next = next_on_path_.at({s, leaf});
            if (plan_.device_of(next) == device_) {
                s = next;
                continue;
            }
            Message fwd;
            fwd.type = MsgType::frame;
            fwd.frame_id = msg.frame_id;
            fwd.stage_id = static_cast<uint16_t>(next);
            fwd.routed_leaf = static_cast<uint16_t>(leaf);
            fwd.timestamp_ns = net::monotonic_ns();
            fwd.payload.assign(plan_.payload_of(s), 0);
            forward(next, std::move(fwd));
            ++forwards_;
            return;
        }
    }

    void forward(StageId next, Message&& msg) {
        PeerLink& link = *peers_.at(plan_.device_of(next));
        if (plan_.faithful) {
            // transfer serializes with compute: the next kernel cannot start
            // until this write has been handed off in full
            const uint64_t t0 = net::monotonic_ns();
            send_on_link(link, msg);
            const double send_s = seconds_since(t0);
            busy_s_ += send_s;
            edge_send_[next].record(send_s);
            return;
        }
        std::lock_guard lock(link.mu);
        link.outq.push_back(std::move(msg));
        link.cv.notify_one();
    }

    void sender_loop(PeerLink* link) {
        while (true) {
            Message msg;
            {
                std::unique_lock lock(link->mu);
                link->cv.wait(lock, [link] { return !link->outq.empty() || link->closing; });
                if (link->outq.empty()) return;
                msg = std::move(link->outq.front());
                link->outq.pop_front();
            }
            const uint64_t t0 = net::monotonic_ns();
            try {
                send_on_link(*link, msg);
            } catch (const NetError& e) {
                fail(e.what());
                return;
            }
            edge_send_[static_cast<StageId>(msg.stage_id)].record(seconds_since(t0));
        }
    }

    void send_on_link(PeerLink& link, const Message& msg) {
        try {
            link.stream.send_message(msg);
        } catch (const NetError& e) {
            log(std::string("send failed (") + e.what() + "), reconnecting to " + link.endpoint);
            link.stream = net::TcpStream::connect_with_retry(link.endpoint, options_.retry);
            link.stream.send_message(msg);
        }
    }

    void send_to_coordinator(const Message& msg) {
        try {
            coordinator_.send_message(msg);
        } catch (const NetError& e) {
            log(std::string("coordinator send failed (") + e.what() + "), reconnecting");
            coordinator_ = net::TcpStream::connect_with_retry(plan_.coordinator_endpoint,
                                                              options_.retry);
            coordinator_.send_message(msg);
        }
    }

    void send_metrics() {
        json stage_exec = json::object();
        for (const auto& [s, stats] : stage_exec_) stage_exec[std::to_string(s)] = stats.to_json();
        json edge_send = json::object();
        for (const auto& [s, stats] : edge_send_) edge_send[std::to_string(s)] = stats.to_json();
        const json doc{{"device", device_},
                       {"frames_processed", frames_processed_},
                       {"forwards", forwards_},
                       {"results", results_},
                       {"busy_s", busy_s_},
                       {"stage_exec_s", stage_exec},
                       {"edge_send_s", edge_send}};
        Message metrics;
        metrics.type = MsgType::metrics;
        metrics.timestamp_ns = net::monotonic_ns();
        const std::string text = doc.dump();
        metrics.payload.assign(text.begin(), text.end());
        send_to_coordinator(metrics);
    }

    void stop_threads() {
        stopping_ = true;
        listener_.close();  // unblocks accept()
        {
            std::lock_guard lock(readers_mu_);
            for (int fd : inbound_fds_) {
                ::shutdown(fd, SHUT_RDWR);
            }
        }
        if (accept_thread_.joinable()) accept_thread_.join();
        {
            std::lock_guard lock(readers_mu_);
            for (auto& t : reader_threads_) {
                if (t.joinable()) t.join();
            }
            reader_threads_.clear();
        }
        for (auto& [d, link] : peers_) {
            if (link->sender.joinable()) {
                {
                    std::lock_guard lock(link->mu);
                    link->closing = true;
                    link->cv.notify_all();
                }
                link->sender.join();
            }
        }
    }

    net::TcpListener listener_;
    DeploymentPlan plan_;
    int device_;
    WorkerOptions options_;

    std::map<StageId, StageKernel> kernels_;
    std::map<std::pair<StageId, StageId>, StageId> next_on_path_;
    std::map<int, std::unique_ptr<PeerLink>> peers_;
    net::TcpStream coordinator_;

    std::thread accept_thread_;
    std::mutex readers_mu_;
    std::vector<std::thread> reader_threads_;
    std::vector<int> inbound_fds_;
    std::atomic<bool> stopping_ = false;

    std::mutex work_mu_;
    std::condition_variable work_cv_;
    std::deque<Message> work_;
    std::string fatal_;

    uint64_t frames_processed_ = 0;
    uint64_t forwards_ = 0;
    uint64_t results_ = 0;
    double busy_s_ = 0.0;
    std::map<StageId, DurationStats> stage_exec_;
    std::map<StageId, DurationStats> edge_send_;
};

}  // namespace

void run_worker(net::TcpListener listener, const DeploymentPlan& plan, int device_index,
                const WorkerOptions& options) {
    Worker worker(std::move(listener), plan, device_index, options);
    worker.run();
}

// ---------------------------------------------------------------------------
// Coordinator

namespace {

class Coordinator {
  public:
    Coordinator(net::TcpListener listener, const DeploymentPlan& plan, const Hierarchy& hierarchy,
                const WorkloadSpec& spec, const CoordinatorOptions& options)
        : listener_(std::move(listener)),
          plan_(plan),
          hierarchy_(hierarchy),
          spec_(spec),
          options_(options) {
        plan_.verify();
        require_valid(hierarchy_);
        if (hierarchy_.size() != plan_.hierarchy.size()) {
            throw DomainError("hierarchy file does not match the plan's embedded hierarchy");
        }
        if (spec_.frame_count == 0) {
            throw DomainError("frame count must be >= 1");
        }
    }

    ~Coordinator() { teardown(); }

    RunReport run() {
        const uint64_t wall_start = net::monotonic_ns();
        accept_thread_ = std::thread([this] { accept_loop(); });

        RunReport report;
        std::exception_ptr pending;
        try {
            for (const auto& ep : plan_.endpoints) {
                worker_streams_.push_back(net::TcpStream::connect_with_retry(ep, options_.retry));
            }
            inject_all();
            await_results();
            report = build_report();
            shutdown_workers(report);
            report.wall_clock_s = seconds_since(wall_start);
        } catch (...) {
            pending = std::current_exception();
        }
        teardown();
        if (pending) std::rethrow_exception(pending);
        return report;
    }

  private:
    void teardown() {
        stopping_ = true;
        listener_.close();
        {
            std::lock_guard lock(readers_mu_);
            for (int fd : inbound_fds_) ::shutdown(fd, SHUT_RDWR);
        }
        if (accept_thread_.joinable()) accept_thread_.join();
        for (auto& t : reader_threads_) {
            if (t.joinable()) t.join();
        }
        reader_threads_.clear();
    }
    void log(const std::string& msg) {
        if (!options_.quiet) std::cerr << "[coordinator] " << msg << "\n";
    }

    void accept_loop() {
        while (!stopping_) {
            net::TcpStream stream;
            try {
                stream = listener_.accept();
            } catch (const NetError&) {
                break;
            }
            std::lock_guard lock(readers_mu_);
            inbound_fds_.push_back(stream.fd());
            reader_threads_.emplace_back(
                [this](net::TcpStream s) { reader_loop(std::move(s)); }, std::move(stream));
        }
    }

    void reader_loop(net::TcpStream stream) {
        try {
            while (true) {
                auto msg = stream.read_message();
                if (!msg) return;
                if (msg->type == MsgType::result) {
                    std::lock_guard lock(mu_);
                    const uint64_t f = msg->frame_id;
                    if (f < completion_ns_.size() && completion_ns_[f] == 0) {
                        completion_ns_[f] = net::monotonic_ns();
                        ++completed_;
                        last_progress_ns_ = completion_ns_[f];
                    }
                    cv_.notify_all();
                } else if (msg->type == MsgType::metrics) {
                    const json doc = json::parse(msg->payload.begin(), msg->payload.end());
                    std::lock_guard lock(mu_);
                    metrics_[doc.value("device", -1)] = doc;
                    cv_.notify_all();
                } else {
                    throw NetError("unexpected message type at coordinator");
                }
            }
        } catch (const std::exception& e) {
            if (!stopping_) {
                std::lock_guard lock(mu_);
                if (error_.empty()) error_ = e.what();
                cv_.notify_all();
            }
        }
    }

    bool timed_out_locked() const {
        return net::monotonic_ns() - last_progress_ns_ >
               static_cast<uint64_t>(options_.result_timeout_s * 1e9);
    }

    void inject_all() {
        const uint64_t F = spec_.frame_count;
        const int window = options_.inflight_window > 0
                               ? options_.inflight_window
                               : 2 * plan_.partition.device_count;
        const LeafSampler sampler(hierarchy_);
        const int root_device = plan_.device_of(0);
        net::TcpStream& root_stream = worker_streams_[static_cast<size_t>(root_device)];

        inject_ns_.assign(F, 0);
        completion_ns_.assign(F, 0);
        frame_leaf_.assign(F, -1);
        last_progress_ns_ = net::monotonic_ns();
        const uint64_t t_start = net::monotonic_ns();

        for (uint64_t f = 0; f < F; ++f) {
            frame_leaf_[f] = sampler.leaf_for_frame(spec_.seed, f);
            {
                std::unique_lock lock(mu_);
                while (f - completed_ >= static_cast<uint64_t>(window) && error_.empty()) {
                    if (timed_out_locked()) {
                        error_ = "timed out waiting for RESULT";
                        break;
                    }
                    cv_.wait_for(lock, std::chrono::milliseconds(100));
                }
                if (!error_.empty()) {
                    injected_ = f;
                    return;
                }
            }
            if (spec_.arrival.kind == ArrivalPolicy::Kind::fixed_interval) {
                const auto release =
                    t_start + static_cast<uint64_t>(static_cast<double>(f) *
                                                    spec_.arrival.interval_s * 1e9);
                while (net::monotonic_ns() < release) {
                    std::this_thread::sleep_for(std::chrono::microseconds(50));
                }
            }
            Message frame;
            frame.type = MsgType::frame;
            frame.frame_id = f;
            frame.stage_id = 0;
            frame.routed_leaf = static_cast<uint16_t>(frame_leaf_[f]);
            frame.timestamp_ns = net::monotonic_ns();
            frame.payload.assign(plan_.input_bytes, 0);
            inject_ns_[f] = net::monotonic_ns();
            root_stream.send_message(frame);
        }
        injected_ = F;
    }

    void await_results() {
        std::unique_lock lock(mu_);
        while (completed_ < injected_ && error_.empty()) {
            if (timed_out_locked()) {
                error_ = "timed out waiting for RESULT";
                break;
            }
            cv_.wait_for(lock, std::chrono::milliseconds(100));
        }
    }

    RunReport build_report() {
        std::lock_guard lock(mu_);
        RunReport report;
        report.complete = error_.empty() && completed_ == spec_.frame_count;
        if (!error_.empty()) {
            log("aborting with partial report: " + error_);
        }
        report.frames_injected = injected_;
        report.frames_completed = completed_;
        report.frame_leaf = frame_leaf_;

        uint64_t first_inject = 0, last_result = 0;
        for (uint64_t f = 0; f < injected_; ++f) {
            if (inject_ns_[f] == 0) continue;
            if (first_inject == 0 || inject_ns_[f] < first_inject) first_inject = inject_ns_[f];
        }
        std::vector<double> latencies;
        for (uint64_t f = 0; f < injected_; ++f) {
            if (completion_ns_[f] == 0) continue;
            last_result = std::max(last_result, completion_ns_[f]);
            latencies.push_back(static_cast<double>(completion_ns_[f] - inject_ns_[f]) * 1e-9);
            report.frame_latency_s.push_back(latencies.back());
        }
        if (last_result > first_inject && completed_ > 0) {
            report.total_time_s = static_cast<double>(last_result - first_inject) * 1e-9;
            report.throughput_fps =
                static_cast<double>(completed_) / report.total_time_s;
        }
        if (!latencies.empty()) {
            double sum = 0.0;
            for (double l : latencies) sum += l;
            report.latency_mean_s = sum / static_cast<double>(latencies.size());
            std::sort(latencies.begin(), latencies.end());
            auto rank = [&](double q) {
                size_t r = static_cast<size_t>(
                    std::ceil(q * static_cast<double>(latencies.size())));
                if (r == 0) r = 1;
                return latencies[std::min(r, latencies.size()) - 1];
            };
            report.latency_p50_s = rank(0.50);
            report.latency_p99_s = rank(0.99);
        }
        return report;
    }

    void shutdown_workers(RunReport& report) {
        for (auto& stream : worker_streams_) {
            Message bye;
            bye.type = MsgType::shutdown;
            bye.timestamp_ns = net::monotonic_ns();
            try {
                stream.send_message(bye);
            } catch (const NetError& e) {
                log(std::string("shutdown send failed: ") + e.what());
            }
        }
        // metrics arrive on the workers' inbound connections
        const auto deadline =
            net::monotonic_ns() + static_cast<uint64_t>(options_.result_timeout_s * 1e9);
        {
            std::unique_lock lock(mu_);
            while (metrics_.size() < plan_.endpoints.size() && net::monotonic_ns() < deadline) {
                cv_.wait_for(lock, std::chrono::milliseconds(50));
            }
            report.worker_metrics = metrics_;
            report.device_busy_s.assign(plan_.endpoints.size(), 0.0);
            report.device_utilization.assign(plan_.endpoints.size(), 0.0);
            for (const auto& [device, doc] : metrics_) {
                if (device < 0 || device >= static_cast<int>(plan_.endpoints.size())) continue;
                const double busy = doc.value("busy_s", 0.0);
                report.device_busy_s[static_cast<size_t>(device)] = busy;
                if (report.total_time_s > 0.0) {
                    report.device_utilization[static_cast<size_t>(device)] =
                        busy / report.total_time_s;
                }
                if (doc.contains("stage_exec_s")) {
                    for (auto it = doc["stage_exec_s"].begin(); it != doc["stage_exec_s"].end();
                         ++it) {
                        report.measured_stage_latency_s[std::stoi(it.key())] =
                            it.value().value("median_s", 0.0);
                    }
                }
                if (doc.contains("edge_send_s")) {
                    for (auto it = doc["edge_send_s"].begin(); it != doc["edge_send_s"].end();
                         ++it) {
                        report.measured_edge_transfer_s[std::stoi(it.key())] =
                            it.value().value("median_s", 0.0);
                    }
                }
            }
        }
    }

    net::TcpListener listener_;
    DeploymentPlan plan_;
    Hierarchy hierarchy_;
    WorkloadSpec spec_;
    CoordinatorOptions options_;

    std::vector<net::TcpStream> worker_streams_;
    std::thread accept_thread_;
    std::mutex readers_mu_;
    std::vector<std::thread> reader_threads_;
    std::vector<int> inbound_fds_;
    std::atomic<bool> stopping_ = false;

    std::mutex mu_;
    std::condition_variable cv_;
    std::vector<uint64_t> inject_ns_;
    std::vector<uint64_t> completion_ns_;
    std::vector<StageId> frame_leaf_;
    uint64_t injected_ = 0;
    uint64_t completed_ = 0;
    uint64_t last_progress_ns_ = 0;
    std::map<int, json> metrics_;
    std::string error_;
};

}  // namespace

RunReport run_coordinator(net::TcpListener listener, const DeploymentPlan& plan,
                          const Hierarchy& hierarchy, const WorkloadSpec& spec,
                          const CoordinatorOptions& options) {
    Coordinator coordinator(std::move(listener), plan, hierarchy, spec, options);
    return coordinator.run();
}

RunReport run_coordinator(const DeploymentPlan& plan, const Hierarchy& hierarchy,
                          const WorkloadSpec& spec, const CoordinatorOptions& options) {
    net::TcpListener listener(plan.coordinator_endpoint);
    return run_coordinator(std::move(listener), plan, hierarchy, spec, options);
}

json RunReport::to_json(bool include_per_frame) const {
    json doc{{"complete", complete},
             {"frames_injected", frames_injected},
             {"frames_completed", frames_completed},
             {"total_time_s", total_time_s},
             {"throughput_fps", throughput_fps},
             {"latency_s",
              {{"mean", latency_mean_s}, {"p50", latency_p50_s}, {"p99", latency_p99_s}}},
             {"device_busy_s", device_busy_s},
             {"device_utilization", device_utilization},
             {"wall_clock_s", wall_clock_s}};
    json stage_lat = json::object();
    for (const auto& [s, v] : measured_stage_latency_s) stage_lat[std::to_string(s)] = v;
    doc["measured_stage_latency_s"] = stage_lat;
    json edge_lat = json::object();
    for (const auto& [s, v] : measured_edge_transfer_s) edge_lat[std::to_string(s)] = v;
    doc["measured_edge_transfer_s"] = edge_lat;
    json metrics = json::object();
    for (const auto& [d, m] : worker_metrics) metrics[std::to_string(d)] = m;
    doc["worker_metrics"] = metrics;
    if (include_per_frame) {
        doc["per_frame_latency_s"] = frame_latency_s;
        doc["frame_leaf"] = frame_leaf;
    }
    return doc;
}

double profile_link(const std::string& via_endpoint, const std::string& target_endpoint,
                    uint32_t payload_bytes, int repetitions) {
    if (repetitions < 1) {
        throw DomainError("profile_link needs at least 1 repetition");
    }
    const net::RetryPolicy retry;
    if (via_endpoint.empty()) {
        return direct_link_probe(target_endpoint, payload_bytes, repetitions, retry);
    }
    net::TcpStream stream = net::TcpStream::connect_with_retry(via_endpoint, retry);
    Message ping;
    ping.type = MsgType::profile_ping;
    ping.timestamp_ns = net::monotonic_ns();
    ping.payload.push_back(kProbeTagRelay);
    wire::put_u16(ping.payload, static_cast<uint16_t>(target_endpoint.size()));
    ping.payload.insert(ping.payload.end(), target_endpoint.begin(), target_endpoint.end());
    wire::put_u32(ping.payload, payload_bytes);
    wire::put_u32(ping.payload, static_cast<uint32_t>(repetitions));
    stream.send_message(ping);
    const auto pong = stream.read_message();
    if (!pong || pong->type != MsgType::profile_pong || pong->payload.size() < 9 ||
        pong->payload[0] != kProbeTagRelay) {
        throw NetError("malformed relay probe response");
    }
    return static_cast<double>(wire::get_u64(pong->payload.data() + 1)) * 1e-9;
}

}  // namespace hpipe
