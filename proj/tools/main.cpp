#include "featxlate/commands.hpp"

int main(int argc, char** argv) { return featxlate::run_cli(argc, argv); }
