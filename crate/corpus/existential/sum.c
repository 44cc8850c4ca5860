// assume(forall i in [0, N) :: A[i] == 1)
sum = 0;
for (i = 0; i < N; i++) {
  sum = sum + A[i];
}
for (j = 0; j < N; j++) {
  B[j] = sum;
}
// assert(exists i in [0, N) :: B[i] == N)
