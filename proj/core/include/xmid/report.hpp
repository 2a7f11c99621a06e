// Plain-text column alignment for the report tables the tools print.

#pragma once

#include <string>
#include <vector>

namespace xmid {

class TextTable {
public:
    void header(std::vector<std::string> cells) { header_ = std::move(cells); }
    void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }
    std::string to_string() const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

std::string format_fixed(double value, int decimals);

}  // namespace xmid
