#pragma once

// Joint token space: six specials, the closed word vocabulary, 32 duration
// bins and one token per codebook entry, laid out in that order.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chatcam/dataset.hpp"
#include "chatcam/error.hpp"
#include "json.hpp"

namespace chatcam {

enum SpecialToken : int { kPad = 0, kBos = 1, kEos = 2, kSep = 3, kToTraj = 4, kToText = 5 };
inline constexpr int kNumSpecials = 6;

struct DurationBins {
  int count = 32;
  double min_s = 0.5;
  double max_s = 60.0;

  int bin_of(double seconds) const {
    const double u = std::log(seconds / min_s) / std::log(max_s / min_s);
    const int b = static_cast<int>(std::floor(u * count));
    return std::clamp(b, 0, count - 1);
  }

  /// Geometric center of a bin.
  double value_of(int bin) const {
    return min_s * std::pow(max_s / min_s, (bin + 0.5) / static_cast<double>(count));
  }
};

class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> words, int codebook_size, DurationBins bins = {})
      : words_(std::move(words)), codebook_size_(codebook_size), bins_(bins) {
    for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
    if (index_.size() != words_.size()) throw Error(ErrorCode::FormatError, "duplicate vocabulary word");
  }

  /// Vocabulary for the procedural corpus.
  static Vocab standard(int codebook_size) { return Vocab(lexicon(), codebook_size); }

  int size() const { return traj_begin() + codebook_size_; }
  int word_count() const { return static_cast<int>(words_.size()); }
  int codebook_size() const { return codebook_size_; }
  const DurationBins& bins() const { return bins_; }
  const std::vector<std::string>& words() const { return words_; }

  int word_begin() const { return kNumSpecials; }
  int duration_begin() const { return word_begin() + word_count(); }
  int traj_begin() const { return duration_begin() + bins_.count; }

  bool is_word(int t) const { return t >= word_begin() && t < duration_begin(); }
  bool is_duration(int t) const { return t >= duration_begin() && t < traj_begin(); }
  bool is_traj(int t) const { return t >= traj_begin() && t < size(); }

  std::optional<int> word_token(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return word_begin() + it->second;
  }

  int duration_token(double seconds) const { return duration_begin() + bins_.bin_of(seconds); }
  double duration_of(int token) const { return bins_.value_of(token - duration_begin()); }

  int traj_token(int code) const {
    if (code < 0 || code >= codebook_size_) throw Error(ErrorCode::IndexError, "code outside codebook");
    return traj_begin() + code;
  }
  int code_of(int token) const { return token - traj_begin(); }

  /// Word tokens of a text. Unknown words raise UnknownToken naming all of
  /// them; text without words raises EmptyPrompt.
  std::vector<int> encode_text(std::string_view text) const {
    std::vector<int> out;
    std::vector<std::string> unknown;
    for (const auto& w : tokenize_words(text)) {
      if (auto t = word_token(w)) out.push_back(*t);
      else unknown.push_back(w);
    }
    if (!unknown.empty()) {
      std::string list;
      for (const auto& w : unknown) list += (list.empty() ? "" : ", ") + w;
      throw Error(ErrorCode::UnknownToken, "words not in vocabulary: " + list);
    }
    if (out.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt has no words");
    return out;
  }

  std::string decode_text(const std::vector<int>& tokens) const {
    std::string out;
    for (int t : tokens) {
      if (!is_word(t)) continue;
      if (!out.empty()) out.push_back(' ');
      out += words_[static_cast<std::size_t>(t - word_begin())];
    }
    return out;
  }

  std::string token_string(int t) const {
    static const char* specials[] = {"<pad>", "<bos>", "<eos>", "<sep>", "<to_traj>", "<to_text>"};
    if (t >= 0 && t < kNumSpecials) return specials[t];
    if (is_word(t)) return words_[static_cast<std::size_t>(t - word_begin())];
    if (is_duration(t)) return "<dur:" + std::to_string(t - duration_begin()) + ">";
    if (is_traj(t)) return "<traj:" + std::to_string(code_of(t)) + ">";
    return "<?>";
  }

  nlohmann::json to_json() const {
    return {{"words", words_},
            {"codebook_size", codebook_size_},
            {"duration_bins", {{"count", bins_.count}, {"min_s", bins_.min_s}, {"max_s", bins_.max_s}}}};
  }

  static Vocab from_json(const nlohmann::json& j) {
    const auto& b = j.at("duration_bins");
    return Vocab(j.at("words").get<std::vector<std::string>>(), j.at("codebook_size").get<int>(),
                 DurationBins{b.at("count").get<int>(), b.at("min_s").get<double>(), b.at("max_s").get<double>()});
  }

  bool operator==(const Vocab& o) const {
    return words_ == o.words_ && codebook_size_ == o.codebook_size_ && bins_.count == o.bins_.count &&
           bins_.min_s == o.bins_.min_s && bins_.max_s == o.bins_.max_s;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
  int codebook_size_ = 0;
  DurationBins bins_;
};

}  // namespace chatcam
