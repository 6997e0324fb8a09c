#pragma once

#include <array>
#include <optional>
#include <string>

#include "selans/dataset.hpp"
#include "selans/errors.hpp"

namespace selans::protocol {

class InvalidConfig : public ConfigError {
public:
    using ConfigError::ConfigError;
};

enum class Scheme { PureEval, SchemeA, SchemeB };

const char* scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);

/// Announced payoff triple plus rendering switches.
///
/// `penalty_incorrect` is stored as a magnitude and applied as its negation.
/// `reward_abstain` absent means the abstention clause is not rendered at
/// all (plain Scheme A); Scheme A with an explicit 0 renders the clause with
/// "+0" and acts as a prompt-matched control.
struct RewardConfig {
    double reward_correct = 1.0;
    double penalty_incorrect = 0.0;
    std::optional<double> reward_abstain;
    Scheme scheme = Scheme::SchemeB;
    bool norms = false;

    void validate() const; // throws InvalidConfig

    static RewardConfig pure_eval();
    static RewardConfig scheme_a(double reward, double penalty, bool norms = false);
    static RewardConfig scheme_b(double reward, double penalty, double abstain,
                                 bool norms = false);
};

/// The five normative principles prepended when norms are enabled.
struct NormsBlock {
    std::array<std::string, 5> principles;

    static const NormsBlock& standard();
    std::string render() const;
};

/// Which response channel carries the evaluated answer.
enum class Channel { FirstRound, BestGuess, None };

const char* channel_name(Channel c);

/// Structured view of one model completion.
struct ParsedResponse {
    enum class Kind { Answered, Abstained, ParseFailure };

    Kind kind = Kind::ParseFailure;
    std::string answer;                          // Answered
    std::optional<double> confidence;            // Answered
    std::optional<std::string> best_guess;       // Abstained
    std::optional<double> best_guess_confidence; // Abstained
    bool confidence_clamped = false;             // some out-of-range value was clipped
    std::string failure_reason;                  // ParseFailure
    std::string raw;

    static ParsedResponse answered(std::string answer, std::optional<double> confidence);
    static ParsedResponse abstained(std::optional<std::string> best_guess,
                                    std::optional<double> best_guess_confidence);
    static ParsedResponse failure(std::string reason);
};

struct ParseOptions {
    /// Pure Eval responses carry no confidence line, so it is only mandatory
    /// for the two-stage format.
    bool require_confidence = true;
};

/// Renders the prompt for one question under a reward configuration.
/// Deterministic: identical inputs produce identical bytes.
std::string render_prompt(const dataset::QuestionRecord& q, const RewardConfig& cfg);

/// Same, but with a caller-supplied template containing the placeholders
/// {q}, {payoff_sentence} and {norms_block}.
std::string render_prompt(const dataset::QuestionRecord& q, const RewardConfig& cfg,
                          const std::string& template_text);

/// The payoff sentence alone ("You will get +1 point if ...").
std::string payoff_sentence(const RewardConfig& cfg);

/// Built-in template texts (also usable as starting points for custom ones).
const std::string& default_two_stage_template();
const std::string& default_pure_eval_template();

/// Parses a completion into the structured form. Never throws: malformed
/// input becomes the ParseFailure variant so batch totals stay accountable.
ParsedResponse parse_response(const std::string& raw, const ParseOptions& opts = {});

/// Canonical text for a structured response; emitted by synthetic agents and
/// the inverse of parse_response on well-formed input.
std::string format_response(const ParsedResponse& parsed);

struct EvaluatedAnswer {
    std::optional<std::string> answer;
    std::optional<double> confidence;
    Channel channel = Channel::None;
};

/// The answer the grader evaluates: the direct answer when the model answered
/// in the first round, the best guess when it abstained, nothing otherwise.
EvaluatedAnswer evaluated_answer(const ParsedResponse& parsed);

/// Minimal-decimal payoff formatting: 1, -1, 0.4, 40.
std::string format_payoff_number(double value);

} // namespace selans::protocol
