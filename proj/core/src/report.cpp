#include "xmid/report.hpp"

#include <iomanip>
#include <sstream>

namespace xmid {

std::string TextTable::to_string() const {
    std::vector<std::size_t> widths;
    auto account = [&](const std::vector<std::string>& cells) {
        if (widths.size() < cells.size()) widths.resize(cells.size(), 0);
        for (std::size_t i = 0; i < cells.size(); ++i) {
            widths[i] = std::max(widths[i], cells[i].size());
        }
    };
    account(header_);
    for (const auto& r : rows_) account(r);

    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            os << cells[i];
            if (i + 1 < cells.size()) {
                os << std::string(widths[i] - cells[i].size() + 2, ' ');
            }
        }
        os << "\n";
    };
    if (!header_.empty()) emit(header_);
    for (const auto& r : rows_) emit(r);
    return os.str();
}

std::string format_fixed(double value, int decimals) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(decimals) << value;
    return os.str();
}

}  // namespace xmid
