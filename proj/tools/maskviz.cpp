// Prints the token/mask rows for a curated example so the integer-only mask
// can be inspected by eye: feature slots, prompt slot, BOS, the two score
// digits, EOS.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "iovqa/codec.hpp"
#include "iovqa/curation.hpp"

using namespace iovqa;

int main(int argc, char** argv) {
    CLI::App app{"visualize loss masks for a score target"};
    double mos = 3.666;
    int feat_k = 2;
    bool full = false;
    bool decimal = false;
    app.add_option("--mos", mos, "mean opinion score in [1,5]");
    app.add_option("--frames-k", feat_k, "number of feature slots");
    app.add_flag("--full", full, "show the all-positions mask instead");
    app.add_flag("--decimal", decimal, "show the decimal-label layout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 1 : 0;
    }

    try {
        const Vocabulary vocab = Vocabulary::standard();
        std::vector<int> ids(feat_k, vocab.feature_slot());
        ids.push_back(vocab.prompt_slot());
        ids.push_back(vocab.bos());
        const int span_start = static_cast<int>(ids.size());
        if (decimal) {
            for (int t : encode_decimal_score(mos, vocab)) ids.push_back(t);
        } else {
            for (int t : encode_integer_score(mos_to_label(mos), vocab)) ids.push_back(t);
        }
        const int span_end = decimal ? span_start : static_cast<int>(ids.size());
        ids.push_back(vocab.eos());

        TokenSequence seq(ids, decimal ? std::nullopt
                                       : std::optional<std::pair<int, int>>({span_start,
                                                                             span_end}));
        seq = (full || decimal) ? build_full_mask(std::move(seq), vocab)
                                : build_integer_only_mask(std::move(seq));
        std::cout << render_mask_rows(seq, vocab);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
