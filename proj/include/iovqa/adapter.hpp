#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "iovqa/codec.hpp"
#include "iovqa/curation.hpp"
#include "iovqa/errors.hpp"
#include "iovqa/evalkit.hpp"
#include "json.hpp"

namespace iovqa {

/// Greedy decoding only: temperature is a compile-time 0 and cannot be
/// raised through this interface.
struct DecodingParams {
    static constexpr double temperature = 0.0;
    int max_new_tokens = 2;

    void validate() const {
        if (max_new_tokens < 2)
            throw InvalidArgument("decoding params: max_new_tokens must be >= 2");
    }
};

struct InferenceRequest {
    std::string rendered_prompt;
    nlohmann::json media;  // {"item_id": ..., "frames": [[...], ...]}
    DecodingParams decoding;

    nlohmann::json to_json() const;
};

/// Either a parsed label in [10,50] or a failure reason; never both, never
/// neither. The raw text is always kept for diagnosis.
struct InferenceResult {
    std::string raw_text;
    std::optional<int> parsed_label;
    std::optional<std::string> failure;

    bool ok() const { return parsed_label.has_value(); }
};

/// Transport contract for a scoring service: send one request, get raw
/// text back, throw TransportError on delivery failure. Implementations
/// must be safe to call from multiple threads.
class ScoreClient {
public:
    virtual ~ScoreClient() = default;
    virtual std::string complete(const InferenceRequest& request) = 0;
    /// How this client's raw text should be parsed. Fine-tuned models emit
    /// bare integers (strict); unaligned baselines need the lenient scan.
    virtual ParseMode parse_mode() const { return ParseMode::strict; }
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{1000};
    double multiplier = 2.0;

    void validate() const;
};

InferenceRequest make_request(const DatasetRecord& record, DecodingParams decoding = {});

/// One scoring round trip. Transport errors are retried per the policy and
/// rethrown once attempts are exhausted; parse problems are recorded in the
/// result instead of thrown, because batch evaluation must survive them.
InferenceResult score_item(ScoreClient& client, const DatasetRecord& record,
                           const RetryPolicy& retry = {});

struct BatchFailure {
    std::string item_id;
    std::string reason;
    std::string raw_text;
};

struct BatchOutcome {
    ScoreVector scores;  // MOS scale, ordered by item_id
    std::vector<BatchFailure> failures;
};

/// Scores every record with up to concurrency_limit requests in flight.
/// Output order is by item_id, independent of completion order. Transport
/// failures that survive retries become failure records. More than 50%
/// failures aborts with BatchAborted.
BatchOutcome batch_score(ScoreClient& client, const std::vector<DatasetRecord>& records,
                         int concurrency_limit, const RetryPolicy& retry = {});

// --- mock and fixture clients -------------------------------------------

/// Always answers with one fixed string.
class EchoClient : public ScoreClient {
public:
    explicit EchoClient(std::string text, ParseMode mode = ParseMode::strict)
        : text_(std::move(text)), mode_(mode) {}
    std::string complete(const InferenceRequest&) override { return text_; }
    ParseMode parse_mode() const override { return mode_; }

private:
    std::string text_;
    ParseMode mode_;
};

/// Answers mos_to_label(mos) for the item named in the request media; the
/// perfect predictor for end-to-end pipeline identities.
class OracleClient : public ScoreClient {
public:
    explicit OracleClient(std::map<std::string, double> mos_by_item)
        : mos_by_item_(std::move(mos_by_item)) {}
    std::string complete(const InferenceRequest& request) override;

private:
    std::map<std::string, double> mos_by_item_;
};

/// Delegates to an inner client but answers un-parseable prose for items
/// selected by the predicate. Item-keyed, so failure placement does not
/// depend on scheduling.
class FailureInjectingClient : public ScoreClient {
public:
    FailureInjectingClient(ScoreClient& inner, std::function<bool(const std::string&)> fails);
    /// Fails items whose trailing digits are divisible by n.
    static std::function<bool(const std::string&)> every_nth_suffix(int n);
    std::string complete(const InferenceRequest& request) override;
    ParseMode parse_mode() const override { return inner_.parse_mode(); }

private:
    ScoreClient& inner_;
    std::function<bool(const std::string&)> fails_;
};

/// Sleeps an item-dependent few milliseconds before delegating, so
/// completion order under concurrency is adversarial while content stays
/// deterministic.
class DelayedClient : public ScoreClient {
public:
    DelayedClient(ScoreClient& inner, int max_delay_ms = 20);
    std::string complete(const InferenceRequest& request) override;
    ParseMode parse_mode() const override { return inner_.parse_mode(); }

private:
    ScoreClient& inner_;
    int max_delay_ms_;
};

/// Throws TransportError for the first `failures_per_item` attempts on each
/// item, then delegates; exercises the retry path.
class FlakyClient : public ScoreClient {
public:
    FlakyClient(ScoreClient& inner, int failures_per_item);
    std::string complete(const InferenceRequest& request) override;
    ParseMode parse_mode() const override { return inner_.parse_mode(); }
    int transport_failures() const;

private:
    ScoreClient& inner_;
    int failures_per_item_;
    mutable std::mutex mu_;
    std::map<std::string, int> attempts_;
    int injected_ = 0;
};

/// Wraps a live client and appends (request, response) pairs to a JSONL
/// fixture for later replay.
class RecordingClient : public ScoreClient {
public:
    RecordingClient(ScoreClient& inner, std::filesystem::path fixture);
    std::string complete(const InferenceRequest& request) override;
    ParseMode parse_mode() const override { return inner_.parse_mode(); }

private:
    ScoreClient& inner_;
    std::filesystem::path fixture_;
    std::mutex mu_;
};

/// Replays a recorded fixture; unknown items are transport errors.
class FixtureClient : public ScoreClient {
public:
    explicit FixtureClient(const std::filesystem::path& fixture,
                           ParseMode mode = ParseMode::strict);
    std::string complete(const InferenceRequest& request) override;
    ParseMode parse_mode() const override { return mode_; }

private:
    std::map<std::string, std::string> responses_;
    ParseMode mode_;
};

}  // namespace iovqa
