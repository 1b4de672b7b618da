#include "iovqa/adapter.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <numeric>
#include <thread>

#include "iovqa/rng.hpp"

namespace iovqa {

void RetryPolicy::validate() const {
    if (attempts < 1) throw InvalidArgument("retry policy: attempts must be >= 1");
    if (base_delay.count() < 0) throw InvalidArgument("retry policy: negative delay");
    if (!(multiplier >= 1.0)) throw InvalidArgument("retry policy: multiplier must be >= 1");
}

nlohmann::json InferenceRequest::to_json() const {
    decoding.validate();
    return nlohmann::json{{"prompt", rendered_prompt},
                          {"media", media},
                          {"decoding",
                           {{"temperature", DecodingParams::temperature},
                            {"max_new_tokens", decoding.max_new_tokens}}}};
}

InferenceRequest make_request(const DatasetRecord& record, DecodingParams decoding) {
    decoding.validate();
    InferenceRequest req;
    req.rendered_prompt = record.rendered_prompt;
    req.media = nlohmann::json{{"item_id", record.item_id},
                               {"frames", record.sampled_features}};
    req.decoding = decoding;
    return req;
}

namespace {

std::string item_id_of(const InferenceRequest& request) {
    try {
        return request.media.at("item_id").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidArgument("request media carries no item_id");
    }
}

}  // namespace

InferenceResult score_item(ScoreClient& client, const DatasetRecord& record,
                           const RetryPolicy& retry) {
    retry.validate();
    const InferenceRequest request = make_request(record);

    std::string raw;
    double delay_ms = static_cast<double>(retry.base_delay.count());
    for (int attempt = 1;; ++attempt) {
        try {
            raw = client.complete(request);
            break;
        } catch (const TransportError&) {
            if (attempt >= retry.attempts) throw;
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long long>(delay_ms)));
            delay_ms *= retry.multiplier;
        }
    }

    InferenceResult result;
    result.raw_text = raw;
    try {
        result.parsed_label = parse_score_output(raw, client.parse_mode());
    } catch (const ScoreFormatError& e) {
        result.failure = e.what();
    } catch (const ScoreRangeError& e) {
        result.failure = e.what();
    }
    return result;
}

BatchOutcome batch_score(ScoreClient& client, const std::vector<DatasetRecord>& records,
                         int concurrency_limit, const RetryPolicy& retry) {
    if (concurrency_limit < 1)
        throw InvalidArgument("batch_score: concurrency_limit must be >= 1");
    retry.validate();

    BatchOutcome outcome;
    if (records.empty()) return outcome;

    std::vector<InferenceResult> results(records.size());
    std::atomic<std::size_t> next{0};
    const int workers =
        std::min<int>(concurrency_limit, static_cast<int>(records.size()));

    auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= records.size()) return;
            try {
                results[i] = score_item(client, records[i], retry);
            } catch (const TransportError& e) {
                results[i].failure = std::string("transport: ") + e.what();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].item_id < records[b].item_id;
    });

    for (std::size_t i : order) {
        const auto& res = results[i];
        if (res.ok()) {
            outcome.scores.item_ids.push_back(records[i].item_id);
            outcome.scores.values.push_back(label_to_mos(*res.parsed_label));
        } else {
            outcome.failures.push_back({records[i].item_id,
                                        res.failure.value_or("no response"), res.raw_text});
        }
    }

    if (outcome.failures.size() * 2 > records.size())
        throw BatchAborted("batch_score: " + std::to_string(outcome.failures.size()) +
                               " of " + std::to_string(records.size()) +
                               " items failed; check client configuration",
                           outcome.failures.size(), records.size());
    return outcome;
}

std::string OracleClient::complete(const InferenceRequest& request) {
    const std::string id = item_id_of(request);
    const auto it = mos_by_item_.find(id);
    if (it == mos_by_item_.end())
        throw TransportError("oracle client: unknown item " + id);
    return std::to_string(mos_to_label(it->second));
}

FailureInjectingClient::FailureInjectingClient(ScoreClient& inner,
                                               std::function<bool(const std::string&)> fails)
    : inner_(inner), fails_(std::move(fails)) {
    if (!fails_) throw InvalidArgument("failure injector: empty predicate");
}

std::function<bool(const std::string&)> FailureInjectingClient::every_nth_suffix(int n) {
    if (n < 1) throw InvalidArgument("every_nth_suffix: n must be >= 1");
    return [n](const std::string& item_id) {
        std::size_t end = item_id.size();
        std::size_t start = end;
        while (start > 0 && std::isdigit(static_cast<unsigned char>(item_id[start - 1])))
            --start;
        if (start == end) return false;
        const long long value = std::stoll(item_id.substr(start));
        return value % n == 0;
    };
}

std::string FailureInjectingClient::complete(const InferenceRequest& request) {
    if (fails_(item_id_of(request)))
        return "I cannot assess this video.";
    return inner_.complete(request);
}

DelayedClient::DelayedClient(ScoreClient& inner, int max_delay_ms)
    : inner_(inner), max_delay_ms_(max_delay_ms) {
    if (max_delay_ms < 1) throw InvalidArgument("delayed client: delay must be >= 1 ms");
}

std::string DelayedClient::complete(const InferenceRequest& request) {
    const std::uint64_t h = fnv1a64(item_id_of(request));
    std::this_thread::sleep_for(std::chrono::milliseconds(
        static_cast<long long>(h % static_cast<std::uint64_t>(max_delay_ms_)) + 1));
    return inner_.complete(request);
}

FlakyClient::FlakyClient(ScoreClient& inner, int failures_per_item)
    : inner_(inner), failures_per_item_(failures_per_item) {
    if (failures_per_item < 0)
        throw InvalidArgument("flaky client: failures_per_item must be >= 0");
}

std::string FlakyClient::complete(const InferenceRequest& request) {
    const std::string id = item_id_of(request);
    {
        std::lock_guard<std::mutex> lock(mu_);
        int& attempts = attempts_[id];
        ++attempts;
        if (attempts <= failures_per_item_) {
            ++injected_;
            throw TransportError("flaky client: injected failure for " + id);
        }
    }
    return inner_.complete(request);
}

int FlakyClient::transport_failures() const {
    std::lock_guard<std::mutex> lock(mu_);
    return injected_;
}

RecordingClient::RecordingClient(ScoreClient& inner, std::filesystem::path fixture)
    : inner_(inner), fixture_(std::move(fixture)) {}

std::string RecordingClient::complete(const InferenceRequest& request) {
    const std::string response = inner_.complete(request);
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream out(fixture_, std::ios::app);
    if (!out) throw IoError("recording client: cannot open " + fixture_.string());
    nlohmann::ordered_json row;
    row["request"] = request.to_json();
    row["response"] = response;
    out << row.dump() << '\n';
    return response;
}

FixtureClient::FixtureClient(const std::filesystem::path& fixture, ParseMode mode)
    : mode_(mode) {
    std::ifstream in(fixture);
    if (!in) throw IoError("fixture client: cannot open " + fixture.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto row = nlohmann::json::parse(line);
            const std::string id =
                row.at("request").at("media").at("item_id").get<std::string>();
            responses_[id] = row.at("response").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError("fixture client: " + fixture.string() + " line " +
                          std::to_string(line_no) + ": " + e.what());
        }
    }
}

std::string FixtureClient::complete(const InferenceRequest& request) {
    const auto it = responses_.find(item_id_of(request));
    if (it == responses_.end())
        throw TransportError("fixture client: no recorded response for " +
                             item_id_of(request));
    return it->second;
}

}  // namespace iovqa
