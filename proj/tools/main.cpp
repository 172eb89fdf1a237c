#include "goct/cli.h"

int main(int argc, char** argv) {
    return goct::cli::run(argc, argv);
}
