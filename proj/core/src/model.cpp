#include "xmid/model.hpp"

#include <sstream>

namespace xmid {

ModelKind parse_model_kind(const std::string& name) {
    for (int i = 0; i < kModelKindCount; ++i) {
        const ModelKind kind = static_cast<ModelKind>(i);
        if (name == kind_name(kind)) return kind;
    }
    // Accept underscore spelling as well.
    std::string dashed = name;
    for (char& c : dashed) {
        if (c == '_') c = '-';
    }
    for (int i = 0; i < kModelKindCount; ++i) {
        const ModelKind kind = static_cast<ModelKind>(i);
        if (dashed == kind_name(kind)) return kind;
    }
    throw std::invalid_argument("unknown model kind: " + name);
}

ModelSpec make_model_spec(ModelKind kind, int n_classes, int input_h, int input_w) {
    ModelSpec spec;
    spec.kind = kind;
    spec.n_classes = n_classes;
    spec.input_h = input_h;
    spec.input_w = input_w;
    spec.dense_widths = {64, 32};
    if (kind_uses_difference(kind)) {
        spec.chain_kernels = {8, 8, 16, 16, 32};
        spec.cross_kernels = spec.chain_kernels;
        spec.dropout_rate = 0.25;
        spec.dropout_last_chain = true;
        spec.l2 = 0.0003;
    } else {
        spec.chain_kernels = {16, 32, 32, 32, 32};
        spec.cross_kernels = {};
        spec.dropout_rate = 0.5;
        spec.dropout_last_chain = false;  // last chain has no dropout
        spec.l2 = 0.003;
    }
    return spec;
}

std::string format_param_report(const ParamReport& report) {
    std::ostringstream os;
    std::size_t width = 5;
    for (const auto& e : report.per_layer) width = std::max(width, e.name.size());
    os << "layer";
    os << std::string(width - 5, ' ') << "  trainable  non-trainable\n";
    for (const auto& e : report.per_layer) {
        os << e.name << std::string(width - e.name.size(), ' ') << "  " << e.trainable << "  "
           << e.non_trainable << "\n";
    }
    os << "total trainable " << report.trainable << ", non-trainable " << report.non_trainable
       << ", total " << report.total() << "\n";
    return os.str();
}

}  // namespace xmid
