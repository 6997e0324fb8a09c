#include "selans/protocol.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace selans::protocol {
namespace {

const std::string kTwoStageTemplate =
    "{norms_block}{payoff_sentence} Give your confidence about your answer in decimal number "
    "between 0 and 1, where 0 means you are completely unsure and 1 means you are completely "
    "sure. Use four decimal places for precision without unnecessary rounding (e.g., 0.8765).\n"
    "\n"
    "If you truly don't know, first say 'I don't know' and do not give a confidence for that "
    "(in that case just leave it blank). If you choose to answer, then provide your answer and "
    "your confidence for it.\n"
    "\n"
    "Next, if you said \"I don't know\", then in the same response, give your best possible "
    "guess for the answer and your confidence for it.\n"
    "\n"
    "Format your response as below such that you must begin your response by saying \"Answer:\" "
    "first:\n"
    "\n"
    "Answer: <your first answer>\n"
    "Confidence: <0 - 1>\n"
    "If you answered \"I don't know\", also include:\n"
    "Best Guess: <your best possible answer>\n"
    "Best Guess Confidence: <0 - 1>\n"
    "\n"
    "Question: {q}";

const std::string kPureEvalTemplate =
    "{norms_block}Answer the following question.\n"
    "\n"
    "Format your response as below such that you must begin your response by saying "
    "\"Answer:\"\n"
    "\n"
    "Answer: <your first answer>\n"
    "\n"
    "Question: {q}";

std::string lower_ascii(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void replace_all(std::string& text, const std::string& token, const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(token, pos)) != std::string::npos) {
        text.replace(pos, token.size(), value);
        pos += value.size();
    }
}

/// The abstention markers are matched on a lowercased view with curly
/// apostrophes folded to ASCII, plus the punctuation-stripped form.
bool is_abstention(const std::string& answer_value) {
    std::string low = lower_ascii(answer_value);
    replace_all(low, "\xe2\x80\x99", "'"); // U+2019
    if (low.find("i don't know") != std::string::npos) return true;
    if (low.find("i dont know") != std::string::npos) return true;
    return dataset::normalize_answer(answer_value).find("i dont know") != std::string::npos;
}

struct ConfidenceValue {
    double value;
    bool clamped;
};

std::optional<ConfidenceValue> parse_confidence(const std::string& text) {
    const std::string t = trim(text);
    if (t.empty()) return std::nullopt;
    const char* begin = t.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || !std::isfinite(v)) return std::nullopt;
    bool clamped = false;
    if (v < 0.0) { v = 0.0; clamped = true; }
    if (v > 1.0) { v = 1.0; clamped = true; }
    return ConfidenceValue{v, clamped};
}

/// Case-insensitive field-prefix match after leading whitespace; returns the
/// value part when the line carries the field.
std::optional<std::string> field_value(const std::string& line, const char* prefix) {
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) return std::nullopt;
    const std::string low = lower_ascii(line.substr(start));
    const std::string want = lower_ascii(prefix);
    if (low.rfind(want, 0) != 0) return std::nullopt;
    return trim(line.substr(start + want.size()));
}

std::string format_confidence(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

} // namespace

const char* scheme_name(Scheme s) {
    switch (s) {
    case Scheme::PureEval: return "pure_eval";
    case Scheme::SchemeA: return "scheme_a";
    case Scheme::SchemeB: return "scheme_b";
    }
    return "unknown";
}

Scheme scheme_from_name(const std::string& name) {
    if (name == "pure_eval" || name == "pure") return Scheme::PureEval;
    if (name == "scheme_a" || name == "a") return Scheme::SchemeA;
    if (name == "scheme_b" || name == "b") return Scheme::SchemeB;
    throw InvalidConfig("unknown scheme: " + name);
}

void RewardConfig::validate() const {
    if (scheme == Scheme::PureEval) return;
    if (!(reward_correct > 0.0)) throw InvalidConfig("reward_correct must be > 0");
    if (penalty_incorrect < 0.0)
        throw InvalidConfig("penalty_incorrect is a magnitude and must be >= 0");
    if (scheme == Scheme::SchemeB && !reward_abstain)
        throw InvalidConfig("scheme_b requires reward_abstain");
    if (reward_abstain) {
        if (*reward_abstain < 0.0) throw InvalidConfig("reward_abstain must be >= 0");
        if (scheme == Scheme::SchemeA && *reward_abstain != 0.0)
            throw InvalidConfig("scheme_a allows reward_abstain only as an explicit 0");
    }
}

RewardConfig RewardConfig::pure_eval() {
    RewardConfig cfg;
    cfg.scheme = Scheme::PureEval;
    return cfg;
}

RewardConfig RewardConfig::scheme_a(double reward, double penalty, bool norms) {
    RewardConfig cfg;
    cfg.scheme = Scheme::SchemeA;
    cfg.reward_correct = reward;
    cfg.penalty_incorrect = penalty;
    cfg.norms = norms;
    cfg.validate();
    return cfg;
}

RewardConfig RewardConfig::scheme_b(double reward, double penalty, double abstain, bool norms) {
    RewardConfig cfg;
    cfg.scheme = Scheme::SchemeB;
    cfg.reward_correct = reward;
    cfg.penalty_incorrect = penalty;
    cfg.reward_abstain = abstain;
    cfg.norms = norms;
    cfg.validate();
    return cfg;
}

const NormsBlock& NormsBlock::standard() {
    static const NormsBlock block{{
        "Always tell the truth (do not lie or deceive).",
        "Treat all topics with respect and humility.",
        "Do not make assumptions without evidence.",
        "Be responsible for your words and their consequences.",
        "Honor reason, clarity, and understanding.",
    }};
    return block;
}

std::string NormsBlock::render() const {
    std::string out;
    for (std::size_t i = 0; i < principles.size(); ++i) {
        out += std::to_string(i + 1);
        out += ". ";
        out += principles[i];
        out += '\n';
    }
    return out;
}

const char* channel_name(Channel c) {
    switch (c) {
    case Channel::FirstRound: return "first_round";
    case Channel::BestGuess: return "best_guess";
    case Channel::None: return "none";
    }
    return "unknown";
}

ParsedResponse ParsedResponse::answered(std::string answer, std::optional<double> confidence) {
    ParsedResponse p;
    p.kind = Kind::Answered;
    p.answer = std::move(answer);
    p.confidence = confidence;
    return p;
}

ParsedResponse ParsedResponse::abstained(std::optional<std::string> best_guess,
                                         std::optional<double> best_guess_confidence) {
    ParsedResponse p;
    p.kind = Kind::Abstained;
    p.best_guess = std::move(best_guess);
    p.best_guess_confidence = best_guess_confidence;
    return p;
}

ParsedResponse ParsedResponse::failure(std::string reason) {
    ParsedResponse p;
    p.kind = Kind::ParseFailure;
    p.failure_reason = std::move(reason);
    return p;
}

std::string format_payoff_number(double value) {
    if (value == 0.0) return "0";
    char buf[64];
    for (int decimals = 0; decimals <= 6; ++decimals) {
        std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
        if (std::strtod(buf, nullptr) == value) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

std::string payoff_sentence(const RewardConfig& cfg) {
    cfg.validate();
    if (cfg.scheme == Scheme::PureEval) return "";
    const std::string reward = "+" + format_payoff_number(cfg.reward_correct);
    const std::string penalty = format_payoff_number(-cfg.penalty_incorrect);
    std::string sentence = "You will get " + reward + " point if your answer is correct, ";
    if (cfg.reward_abstain) {
        sentence += "+" + format_payoff_number(*cfg.reward_abstain) +
                    " if you answer 'I don't know', ";
    }
    sentence += "and " + penalty + " if incorrect.";
    return sentence;
}

const std::string& default_two_stage_template() { return kTwoStageTemplate; }
const std::string& default_pure_eval_template() { return kPureEvalTemplate; }

std::string render_prompt(const dataset::QuestionRecord& q, const RewardConfig& cfg,
                          const std::string& template_text) {
    cfg.validate();
    std::string out = template_text;
    replace_all(out, "{norms_block}", cfg.norms ? NormsBlock::standard().render() + "\n" : "");
    replace_all(out, "{payoff_sentence}", payoff_sentence(cfg));
    replace_all(out, "{q}", q.question);
    return out;
}

std::string render_prompt(const dataset::QuestionRecord& q, const RewardConfig& cfg) {
    cfg.validate();
    const std::string& tmpl =
        cfg.scheme == Scheme::PureEval ? kPureEvalTemplate : kTwoStageTemplate;
    return render_prompt(q, cfg, tmpl);
}

ParsedResponse parse_response(const std::string& raw, const ParseOptions& opts) {
    std::optional<std::string> answer, confidence, best_guess, best_guess_confidence;

    std::size_t pos = 0;
    while (pos <= raw.size()) {
        std::size_t nl = raw.find('\n', pos);
        std::string line =
            nl == std::string::npos ? raw.substr(pos) : raw.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();

        // Longest prefixes first so "Best Guess Confidence:" is not consumed
        // by "Best Guess:". First occurrence of each field wins.
        if (auto v = field_value(line, "best guess confidence:")) {
            if (!best_guess_confidence) best_guess_confidence = *v;
        } else if (auto v2 = field_value(line, "best guess:")) {
            if (!best_guess) best_guess = *v2;
        } else if (auto v3 = field_value(line, "answer:")) {
            if (!answer) answer = *v3;
        } else if (auto v4 = field_value(line, "confidence:")) {
            if (!confidence) confidence = *v4;
        }

        if (nl == std::string::npos) break;
        pos = nl + 1;
    }

    ParsedResponse result;
    if (!answer) {
        result = ParsedResponse::failure("missing Answer field");
        result.raw = raw;
        return result;
    }

    if (is_abstention(*answer)) {
        std::optional<std::string> guess;
        if (best_guess && !best_guess->empty() && !is_abstention(*best_guess))
            guess = *best_guess;
        std::optional<double> guess_conf;
        bool clamped = false;
        if (guess && best_guess_confidence) {
            if (auto cv = parse_confidence(*best_guess_confidence)) {
                guess_conf = cv->value;
                clamped = cv->clamped;
            }
        }
        result = ParsedResponse::abstained(guess, guess_conf);
        result.confidence_clamped = clamped;
        result.raw = raw;
        return result;
    }

    if (answer->empty()) {
        result = ParsedResponse::failure("empty Answer field");
        result.raw = raw;
        return result;
    }

    std::optional<ConfidenceValue> conf;
    if (confidence) conf = parse_confidence(*confidence);
    if (!conf && opts.require_confidence) {
        result = ParsedResponse::failure("missing Confidence field");
        result.raw = raw;
        return result;
    }

    result = ParsedResponse::answered(*answer,
                                      conf ? std::optional<double>(conf->value) : std::nullopt);
    result.confidence_clamped = conf && conf->clamped;
    result.raw = raw;
    return result;
}

std::string format_response(const ParsedResponse& parsed) {
    switch (parsed.kind) {
    case ParsedResponse::Kind::Answered: {
        std::string out = "Answer: " + parsed.answer;
        if (parsed.confidence) out += "\nConfidence: " + format_confidence(*parsed.confidence);
        return out;
    }
    case ParsedResponse::Kind::Abstained: {
        std::string out = "Answer: I don't know\nConfidence:";
        if (parsed.best_guess) {
            out += "\nBest Guess: " + *parsed.best_guess;
            if (parsed.best_guess_confidence)
                out += "\nBest Guess Confidence: " +
                       format_confidence(*parsed.best_guess_confidence);
        }
        return out;
    }
    case ParsedResponse::Kind::ParseFailure: return parsed.raw;
    }
    return {};
}

EvaluatedAnswer evaluated_answer(const ParsedResponse& parsed) {
    EvaluatedAnswer out;
    switch (parsed.kind) {
    case ParsedResponse::Kind::Answered:
        out.answer = parsed.answer;
        out.confidence = parsed.confidence;
        out.channel = Channel::FirstRound;
        break;
    case ParsedResponse::Kind::Abstained:
        if (parsed.best_guess) {
            out.answer = parsed.best_guess;
            out.confidence = parsed.best_guess_confidence;
            out.channel = Channel::BestGuess;
        }
        break;
    case ParsedResponse::Kind::ParseFailure: break;
    }
    return out;
}

} // namespace selans::protocol
